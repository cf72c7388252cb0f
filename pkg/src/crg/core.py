"""Vector math and probability primitives shared by every engine module.

All public functions are pure, operate on float64, and are safe to call from
any thread. Row-batched variants exist for the hot per-view paths and skip
per-call validation; the scalar entry points validate their inputs.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateVector, InvalidDistribution, NumericalError

# Rows with a smaller norm than this have no usable direction.
NORM_FLOOR = 1e-12

# Norms this close to 1 divide by exactly 1.0, making normalization bitwise
# idempotent (repeated normalization cannot drift by ulps).
_UNIT_TOL = 1e-12

_DIST_TOL = 1e-9


def as_float_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidDistribution(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, preserving its direction.

    Raises DegenerateVector when the norm is below ``NORM_FLOOR`` (a zero
    vector, e.g. a corrupt input or a fully cancelled residual sum).
    """
    arr = as_float_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < NORM_FLOOR:
        raise DegenerateVector(f"cannot normalize a zero vector (norm={norm!r})")
    if abs(norm - 1.0) <= _UNIT_TOL:
        norm = 1.0
    return arr / norm


def normalize_rows(matrix, name: str = "matrix") -> np.ndarray:
    """Row-wise :func:`normalize`; reports every degenerate row index."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise DegenerateVector(f"{name} must be 2-D, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        raise DegenerateVector(
            f"{name} has zero-norm rows at indices {bad.tolist()}", rows=tuple(bad.tolist())
        )
    norms = np.where(np.abs(norms - 1.0) <= _UNIT_TOL, 1.0, norms)
    return arr / norms[:, None]


def softmax(logits, tau: float) -> np.ndarray:
    """Temperature softmax: probabilities proportional to ``exp(logit / tau)``.

    Numerically stable via max-logit subtraction; the argmax of the output
    matches the argmax of the input for any ``tau > 0``.
    """
    arr = as_float_vector(logits, "logits")
    if not np.all(np.isfinite(arr)):
        raise NumericalError("softmax received non-finite logits")
    return _softmax_stable(arr / tau)


def softmax_rows(logits: np.ndarray, tau: float) -> np.ndarray:
    """Row-batched softmax over an (n, K) logit matrix. No validation."""
    z = logits / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_stable(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def check_distribution(p, name: str = "distribution") -> np.ndarray:
    arr = as_float_vector(p, name)
    if not np.all(np.isfinite(arr)):
        raise InvalidDistribution(f"{name} has non-finite entries")
    if np.any(arr < -_DIST_TOL) or np.any(arr > 1.0 + _DIST_TOL):
        raise InvalidDistribution(f"{name} has entries outside [0, 1]")
    total = float(arr.sum())
    if abs(total - 1.0) > _DIST_TOL:
        raise InvalidDistribution(f"{name} sums to {total!r}, not 1")
    return np.clip(arr, 0.0, None)


def entropy(p) -> float:
    """Shannon entropy in nats, with the convention 0*ln(0) = 0.

    The input must be a valid probability vector; the result lies in
    [0, ln K].
    """
    arr = check_distribution(p)
    return entropy_unchecked(arr)


def entropy_unchecked(p: np.ndarray) -> float:
    support = p[p > 0.0]
    return float(-(support * np.log(support)).sum())


def entropy_rows(p: np.ndarray) -> np.ndarray:
    """Row-batched entropy (nats) of an (n, K) matrix of distributions."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def cosine(a, b) -> float:
    """Cosine similarity of two non-degenerate vectors, in [-1, 1]."""
    ua = normalize(a)
    ub = normalize(b)
    return float(ua @ ub)
