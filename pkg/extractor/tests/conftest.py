import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def toy_image_root(tmp_path):
    """Ten images in two luminance classes: 5 dark, 5 bright."""
    root = tmp_path / "images"
    rng = np.random.default_rng(17)
    for name, level in (("bright", 215), ("dark", 40)):
        folder = root / name
        folder.mkdir(parents=True)
        for i in range(5):
            pixels = np.clip(
                rng.normal(level, 12, size=(32, 32, 3)), 0, 255
            ).astype(np.uint8)
            Image.fromarray(pixels).save(folder / f"{name}_{i}.png")
    return root
