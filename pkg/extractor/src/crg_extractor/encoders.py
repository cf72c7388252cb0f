"""Encoder backends.

Two families are registered by identifier prefix:

* ``clip:<model-id>`` loads a pretrained CLIP checkpoint through
  ``transformers`` (weights must be obtainable; a load failure aborts the
  job, it is never silently substituted);
* ``toy:<dim>`` is a deterministic offline encoder for tests and plumbing
  checks: images are downsampled, brightness-centered and passed through a
  fixed random projection; prompts map to constant-luminance canvases
  through the same pathway (a small luminance vocabulary gives class names
  like "dark" or "bright" real visual meaning), so text and image features
  share one embedding space.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


class ExtractorError(Exception):
    """Job-level failure (unusable encoder, unreadable inputs, bad config)."""


_TOY_PATCH = 16  # toy encoder input resolution
_TOY_SEED = 0x7E57  # fixed: the projection is part of the "model", not the job

_LUMINANCE_VOCAB = {
    "black": 10,
    "dark": 64,
    "gray": 128,
    "grey": 128,
    "light": 192,
    "bright": 224,
    "white": 245,
}


class ToyEncoder:
    """Deterministic projection encoder over a shared pixel space."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ExtractorError(f"toy encoder dimension must be >= 2, got {dim}")
        self.dim = dim
        rng = np.random.default_rng([_TOY_SEED, dim])
        self._projection = rng.standard_normal((dim, _TOY_PATCH * _TOY_PATCH))

    def _encode_pixels(self, pixels: np.ndarray) -> np.ndarray:
        centered = pixels.astype(np.float64) / 255.0 - 0.5
        vec = self._projection @ centered.ravel()
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec = self._projection[:, 0].copy()
            norm = np.linalg.norm(vec)
        return vec / norm

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), self.dim))
        for i, image in enumerate(images):
            small = image.convert("L").resize((_TOY_PATCH, _TOY_PATCH), Image.BILINEAR)
            out[i] = self._encode_pixels(np.asarray(small))
        return out

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        out = np.empty((len(prompts), self.dim))
        for i, prompt in enumerate(prompts):
            out[i] = self._encode_pixels(self._prompt_canvas(prompt))
        return out

    def _prompt_canvas(self, prompt: str) -> np.ndarray:
        tokens = prompt.lower().replace(".", " ").replace(",", " ").split()
        level = None
        for token in tokens:
            if token in _LUMINANCE_VOCAB:
                level = _LUMINANCE_VOCAB[token]
                break
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        if level is None:
            level = digest[0]
        # faint per-prompt texture so distinct prompts never collapse to the
        # same feature, mimicking a real text tower's sensitivity
        texture_rng = np.random.default_rng(list(digest[:8]))
        texture = texture_rng.uniform(-3.0, 3.0, size=(_TOY_PATCH, _TOY_PATCH))
        return np.full((_TOY_PATCH, _TOY_PATCH), float(level)) + texture


class ClipEncoder:
    """Pretrained CLIP via transformers; both towers, unit-norm outputs."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExtractorError(f"clip encoder needs torch+transformers: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ExtractorError(f"cannot load encoder {model_id!r}: {exc}") from exc
        self._model.eval()
        self._torch = torch
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(images=images, return_tensors="pt")
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.cpu().numpy().astype(np.float64)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(text=prompts, return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.cpu().numpy().astype(np.float64)


def load_encoder(identifier: str):
    """Resolve an encoder identifier; raises ExtractorError on failure."""
    if identifier.startswith("toy:"):
        try:
            dim = int(identifier.split(":", 1)[1])
        except ValueError as exc:
            raise ExtractorError(f"bad toy encoder identifier {identifier!r}") from exc
        return ToyEncoder(dim)
    if identifier.startswith("clip:"):
        return ClipEncoder(identifier.split(":", 1)[1])
    raise ExtractorError(
        f"unknown encoder {identifier!r}; expected 'toy:<dim>' or 'clip:<model-id>'"
    )
