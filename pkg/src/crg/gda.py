"""Gaussian discriminant analysis over the cached class features.

Class-conditional Gaussians with one covariance pooled across classes and
uniform priors collapse to a linear classifier: w_k = precision @ mu_k,
b_k = log(1/K) - 0.5 * mu_k' precision mu_k. The precision comes from a
ridge-regularized Cholesky solve so the all-singleton start (zero pooled
covariance) stays invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cache import PositiveCache
from .config import EngineConfig
from .exceptions import NumericalError

# Trace-scale floor so a zero covariance still yields a finite ridge.
TRACE_FLOOR = 1e-6


@dataclass
class GdaModel:
    """Immutable per-stream-step snapshot of the Gaussian classifier."""

    means: np.ndarray        # (K, d)
    covariance: np.ndarray   # (d, d) pooled within-class
    precision: np.ndarray    # (d, d) inverse of the ridged covariance
    weights: np.ndarray      # (K, d)
    biases: np.ndarray       # (K,)
    priors: np.ndarray       # (K,) uniform


def class_stats(cache: PositiveCache, r_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residual-shifted class means and the pooled within-class covariance.

    Every cached feature of class k is shifted by ``r_pos[k]`` (no
    re-normalization) before the mean; the covariance pools squared
    deviations over all classes and divides by the total entry count.
    """
    K, d = cache.K, cache.d
    means = np.empty((K, d))
    scatter = np.zeros((d, d))
    total = 0
    for k in range(K):
        shifted = cache.features_matrix(k) + r_pos[k]
        mu = shifted.mean(axis=0)
        means[k] = mu
        centered = shifted - mu
        scatter += centered.T @ centered
        total += shifted.shape[0]
    return means, scatter / total


def regularized_precision(covariance: np.ndarray, eps_cov: float) -> np.ndarray:
    """Inverse of (covariance + eps * I), eps = eps_cov * max(trace/d, floor).

    Uses a Cholesky solve (never an explicit cofactor inverse) and returns a
    symmetrized matrix. Raises NumericalError if the ridged matrix still
    fails to factor.
    """
    covariance = np.asarray(covariance, dtype=np.float64)
    d = covariance.shape[0]
    eps = eps_cov * max(float(np.trace(covariance)) / d, TRACE_FLOOR)
    ridged = covariance + eps * np.eye(d)
    try:
        factor = scipy.linalg.cho_factor(ridged, lower=True, check_finite=False)
        precision = scipy.linalg.cho_solve(factor, np.eye(d), check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"covariance inversion failed: {exc}") from exc
    return (precision + precision.T) / 2.0


def build_gda(means: np.ndarray, precision: np.ndarray,
              covariance: np.ndarray | None = None) -> GdaModel:
    """Assemble the linear classifier from means and a (symmetric) precision."""
    means = np.asarray(means, dtype=np.float64)
    K, d = means.shape
    weights = means @ precision
    biases = math.log(1.0 / K) - 0.5 * np.einsum("kd,kd->k", means, weights)
    if covariance is None:
        covariance = np.full((d, d), np.nan)
    return GdaModel(
        means=means,
        covariance=covariance,
        precision=precision,
        weights=weights,
        biases=biases,
        priors=np.full(K, 1.0 / K),
    )


def fit_gda(cache: PositiveCache, r_pos: np.ndarray, config: EngineConfig) -> GdaModel:
    """class_stats -> regularized_precision -> build_gda in one step."""
    means, covariance = class_stats(cache, r_pos)
    precision = regularized_precision(covariance, config.eps_cov)
    return build_gda(means, precision, covariance)


def gda_scores(model: GdaModel, f: np.ndarray) -> np.ndarray:
    """h_k(f) = w_k . f + b_k for every class."""
    return model.weights @ np.asarray(f, dtype=np.float64) + model.biases


def gda_scores_batch(model: GdaModel, features: np.ndarray) -> np.ndarray:
    """(n, d) features -> (n, K) scores."""
    return features @ model.weights.T + model.biases
