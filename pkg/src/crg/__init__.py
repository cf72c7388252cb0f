"""Online test-time adaptation of zero-shot embedding classifiers.

The engine maintains entropy-priority feature caches per class, calibrates
text/positive/negative prototypes with learnable residuals (one AdamW step
per sample against an entropy-plus-separation objective), and makes final
decisions by fusing text similarity, a Gaussian discriminant score over the
cached features, and a negative-prototype affinity term.
"""

from .config import EngineConfig
from .data import Manifest, SampleRecord, SynthConfig, synth_generate, synth_write
from .engine import (
    EngineState,
    MetricsReport,
    SamplePrediction,
    expected_calibration_error,
    load_checkpoint,
    process_sample,
    run_stream,
    save_checkpoint,
)
from .estimator import CrgClassifier
from .exceptions import (
    ConfigMismatch,
    CrgError,
    DegenerateVector,
    FilterEmpty,
    FormatError,
    InternalInvariantViolation,
    InvalidDistribution,
    InvalidInput,
    NumericalError,
    VersionError,
)

__version__ = "0.1.0"

__all__ = [
    "CrgClassifier",
    "EngineConfig",
    "EngineState",
    "Manifest",
    "MetricsReport",
    "SamplePrediction",
    "SampleRecord",
    "SynthConfig",
    "expected_calibration_error",
    "load_checkpoint",
    "process_sample",
    "run_stream",
    "save_checkpoint",
    "synth_generate",
    "synth_write",
    "ConfigMismatch",
    "CrgError",
    "DegenerateVector",
    "FilterEmpty",
    "FormatError",
    "InternalInvariantViolation",
    "InvalidDistribution",
    "InvalidInput",
    "NumericalError",
    "VersionError",
    "__version__",
]
