"""Residual-calibrated text, positive and negative class prototypes.

Calibration adds a learnable residual row to a base row and re-normalizes.
Negative prototypes summarize "everything but this class": the mean of the
other classes' positive prototypes, then calibrated by their own residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .core import NORM_FLOOR, normalize_rows
from .exceptions import ConfigMismatch


@dataclass
class ResidualSet:
    """The three learnable K x d residual matrices (text, positive, negative)."""

    text: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @classmethod
    def zeros(cls, K: int, d: int) -> "ResidualSet":
        return cls(np.zeros((K, d)), np.zeros((K, d)), np.zeros((K, d)))

    def all_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.text))
            and np.all(np.isfinite(self.pos))
            and np.all(np.isfinite(self.neg))
        )


@dataclass
class PrototypeState:
    """Calibrated unit-row prototype matrices plus the raw cache means."""

    text: np.ndarray
    pos: np.ndarray
    neg: np.ndarray | None
    raw_pos_means: np.ndarray


def calibrate(base: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Row-wise normalize(base + residual).

    Raises DegenerateVector (with row indices) when a base row and its
    residual cancel to the zero vector.
    """
    base = np.asarray(base, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    if base.shape != residual.shape:
        raise ConfigMismatch(
            f"residual shape {residual.shape} does not match base shape {base.shape}"
        )
    return normalize_rows(base + residual, "calibrated prototypes")


def _calibrate_tolerant(base: np.ndarray, residual: np.ndarray) -> tuple[np.ndarray, int]:
    """calibrate(), but degenerate rows retry with a zero residual.

    Returns the calibrated rows and how many rows needed the fallback. Rows
    that stay degenerate even with a zero residual still raise.
    """
    summed = base + residual
    norms = np.linalg.norm(summed, axis=1)
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size == 0:
        return normalize_rows(summed, "calibrated prototypes"), 0
    patched = summed.copy()
    patched[bad] = base[bad]
    return normalize_rows(patched, "calibrated prototypes"), int(bad.size)


def negative_prototypes(pos: np.ndarray) -> np.ndarray:
    """Row k = mean of the other classes' rows: (sum - row_k) / (K - 1)."""
    pos = np.asarray(pos, dtype=np.float64)
    K = pos.shape[0]
    if K < 2:
        raise ConfigMismatch("negative prototypes need at least two classes")
    total = pos.sum(axis=0, keepdims=True)
    return (total - pos) / (K - 1)


def build_prototype_state(raw_means: np.ndarray, text_rows: np.ndarray,
                          residuals: ResidualSet, config: EngineConfig) -> PrototypeState:
    """Compose the calibration pipeline into one prototype state.

    text = calibrate(text cache, R_text); pos = calibrate(cache means, R_pos);
    neg  = calibrate(negative base, R_neg) where the negative base is the
    other-class mean of the calibrated positives (or of the raw means when
    ``config.negatives_from == "raw_means"``). Pure in its inputs.
    """
    state, fallbacks = build_prototype_state_tolerant(
        raw_means, text_rows, residuals, config, tolerant=False
    )
    assert fallbacks == 0
    return state


def build_prototype_state_tolerant(
    raw_means: np.ndarray,
    text_rows: np.ndarray,
    residuals: ResidualSet,
    config: EngineConfig,
    tolerant: bool = True,
) -> tuple[PrototypeState, int]:
    """build_prototype_state with the streaming fallback: a row whose base
    and residual cancel falls back to its zero-residual direction instead of
    aborting. Returns the state and the number of rows that fell back."""
    run = _calibrate_tolerant if tolerant else (lambda b, r: (calibrate(b, r), 0))
    raw_means = np.asarray(raw_means, dtype=np.float64)
    text, n_text = run(text_rows, residuals.text)
    pos, n_pos = run(raw_means, residuals.pos)
    if config.use_negatives:
        base = pos if config.negatives_from == "calibrated" else raw_means
        neg, n_neg = run(negative_prototypes(base), residuals.neg)
    else:
        neg, n_neg = None, 0
    return PrototypeState(text=text, pos=pos, neg=neg, raw_pos_means=raw_means), (
        n_text + n_pos + n_neg
    )
