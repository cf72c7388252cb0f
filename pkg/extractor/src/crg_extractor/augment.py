"""Seeded view augmentation: random resized crop plus horizontal flip."""

from __future__ import annotations

import numpy as np
from PIL import Image

CROP_SCALE = (0.5, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
FLIP_PROB = 0.5


def augment_view(image: Image.Image, rng: np.random.Generator) -> Image.Image:
    """One augmented view: crop a random-scale random-ratio box, resize back
    to the source size, flip horizontally with probability 1/2."""
    width, height = image.size
    area = width * height
    for _ in range(10):
        target_area = area * rng.uniform(*CROP_SCALE)
        ratio = np.exp(rng.uniform(np.log(CROP_RATIO[0]), np.log(CROP_RATIO[1])))
        crop_w = int(round(np.sqrt(target_area * ratio)))
        crop_h = int(round(np.sqrt(target_area / ratio)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            left = int(rng.integers(0, width - crop_w + 1))
            top = int(rng.integers(0, height - crop_h + 1))
            view = image.crop((left, top, left + crop_w, top + crop_h))
            break
    else:
        view = image.copy()
    view = view.resize((width, height), Image.BILINEAR)
    if rng.random() < FLIP_PROB:
        view = view.transpose(Image.FLIP_LEFT_RIGHT)
    return view


def augmentation_note() -> str:
    return (f"augmentation: random resized crop scale={CROP_SCALE} "
            f"ratio=({CROP_RATIO[0]:.3f},{CROP_RATIO[1]:.3f}) + horizontal flip "
            f"p={FLIP_PROB}")
