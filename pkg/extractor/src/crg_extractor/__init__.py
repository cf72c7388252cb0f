"""Embedding-stream extractor: encodes class prompts and augmented image
views with a vision-language encoder and dumps them in the CRG binary
formats consumed by the adaptation engine."""

from .extract import ExtractJob, extract
from .encoders import ExtractorError, load_encoder

__version__ = "0.1.0"

__all__ = ["ExtractJob", "ExtractorError", "extract", "load_encoder", "__version__"]
