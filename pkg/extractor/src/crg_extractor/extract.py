"""The extraction job: encode class prompts and per-image view stacks.

The image source is a directory with one subdirectory per class; class
names are the sorted subdirectory names and double as the prompt fill-ins.
View 0 of every record is the unaugmented image; the remaining views are
seeded random-resized-crop + flip variants. Unreadable images are skipped
with a log line; an unusable encoder aborts the whole job.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .augment import augment_view, augmentation_note
from .encoders import ExtractorError, load_encoder
from .formats import SampleBlockWriter, write_manifest, write_text_block

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}
CLASS_PLACEHOLDER = "{CLASS}"


@dataclass
class ExtractJob:
    """Everything one extraction run needs.

    ``templates`` are prompt patterns containing the ``{CLASS}`` placeholder
    (e.g. "a photo of a {CLASS}."). With several templates the text feature
    is the normalized average of the per-template encodings unless
    ``ensemble`` is off, in which case ``template_index`` picks one.
    """

    dataset_name: str
    image_root: str | Path
    encoder: str
    out_dir: str | Path
    templates: list[str] = field(default_factory=lambda: ["a photo of a {CLASS}."])
    n_views: int = 16
    seed: int = 0
    ensemble: bool = True
    template_index: int = 0

    def validate(self) -> None:
        if self.n_views < 1:
            raise ExtractorError("n_views must be >= 1")
        if not self.templates:
            raise ExtractorError("at least one prompt template is required")
        for template in self.templates:
            if CLASS_PLACEHOLDER not in template:
                raise ExtractorError(
                    f"template {template!r} lacks the {CLASS_PLACEHOLDER} placeholder"
                )
        if not self.ensemble and not 0 <= self.template_index < len(self.templates):
            raise ExtractorError(f"template_index {self.template_index} out of range")


def _scan_classes(root: Path) -> list[tuple[str, list[Path]]]:
    if not root.is_dir():
        raise ExtractorError(f"image root {root} is not a directory")
    classes = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        images = sorted(p for p in sub.iterdir()
                        if p.suffix.lower() in IMAGE_SUFFIXES)
        if images:
            classes.append((sub.name, images))
    if len(classes) < 2:
        raise ExtractorError(f"image root {root} needs at least two class folders")
    return classes


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ExtractorError("encoder produced a zero feature vector")
    return rows / norms


def _text_features(encoder, job: ExtractJob, class_names: list[str]) -> np.ndarray:
    if job.ensemble:
        templates = job.templates
    else:
        templates = [job.templates[job.template_index]]
    per_template = []
    for template in templates:
        prompts = [template.replace(CLASS_PLACEHOLDER, name) for name in class_names]
        per_template.append(_normalize_rows(encoder.encode_texts(prompts)))
    return _normalize_rows(np.mean(per_template, axis=0))


def extract(job: ExtractJob) -> Path:
    """Run the job; returns the manifest path."""
    job.validate()
    encoder = load_encoder(job.encoder)  # aborts the job on failure
    classes = _scan_classes(Path(job.image_root))
    class_names = [name for name, _ in classes]

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = _text_features(encoder, job, class_names)
    write_text_block(out_dir / "text.crgtxt", text)

    sample_id = 0
    skipped = 0
    with SampleBlockWriter(out_dir / "samples.crgemb", encoder.dim, len(classes)) as writer:
        for label, (name, paths) in enumerate(classes):
            for path in paths:
                try:
                    with Image.open(path) as raw:
                        image = raw.convert("RGB")
                except (OSError, UnidentifiedImageError) as exc:
                    logger.warning("skipping unreadable image %s (%s)", path, exc)
                    skipped += 1
                    continue
                rng = np.random.default_rng([job.seed, sample_id])
                views = [image] + [augment_view(image, rng)
                                   for _ in range(job.n_views - 1)]
                feats = _normalize_rows(encoder.encode_images(views))
                writer.add(sample_id, label, feats)
                sample_id += 1

    note = (f"encoder={job.encoder}; templates={job.templates}; "
            f"ensemble={job.ensemble}; seed={job.seed}; {augmentation_note()}; "
            f"skipped={skipped}")
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, d=encoder.dim, K=len(classes),
                   class_names=class_names, text_path="text.crgtxt",
                   samples_path="samples.crgemb", dataset_name=job.dataset_name,
                   note=note)
    return manifest_path
