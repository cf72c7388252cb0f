"""Input validation helpers for the public estimator surface."""

from __future__ import annotations

import numpy as np

from .core import normalize_rows
from .exceptions import InvalidInput


def check_feature_matrix(X, d: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a float64 (n, d) matrix of unit rows.

    Rows are re-normalized (raising on zero rows); a dimension mismatch with
    ``d`` raises InvalidInput.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidInput(f"{name} must have at least one row")
    if d is not None and arr.shape[1] != d:
        raise InvalidInput(f"{name} has {arr.shape[1]} columns, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    return normalize_rows(arr, name)


def check_view_stack(X, d: int | None = None, name: str = "X") -> list[np.ndarray]:
    """Coerce a batch of samples into a list of (n_views, d) unit-row arrays.

    Accepts a 3-D array (n, views, d), a 2-D array (n, d) treated as one
    view per sample, or a sequence of per-sample 2-D arrays with possibly
    different view counts.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_feature_matrix(X[i], d, f"{name}[{i}]") for i in range(X.shape[0])]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_feature_matrix(X[i][None, :], d, f"{name}[{i}]") for i in range(X.shape[0])]
    try:
        items = list(X)
    except TypeError as exc:
        raise InvalidInput(f"{name} must be an array or a sequence of arrays") from exc
    if not items:
        raise InvalidInput(f"{name} must contain at least one sample")
    return [check_feature_matrix(item, d, f"{name}[{i}]") for i, item in enumerate(items)]
