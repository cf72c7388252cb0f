"""Fused inference logits, the adaptation losses, their exact gradients, and
the single-step AdamW update.

The per-sample objective is

    L = H(mean of filtered view predictions)
        + xi1 * sum_{m != n} exp(-gamma * ||t_m - t_n||^2)
        + xi2 * sum_k  cos(v_k_pos, v_k_neg)

with every prototype row being normalize(base + residual). Gradients with
respect to the three residual matrices are computed by a hand-written
reverse pass over this fixed graph, including the chain through row
normalization and through the negative base's dependence on the calibrated
positives. The contract is exactness against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .core import entropy_unchecked, normalize_rows, softmax_rows
from .exceptions import FilterEmpty, NumericalError
from .gda import GdaModel, gda_scores_batch
from .prototypes import PrototypeState, ResidualSet, negative_prototypes


@dataclass(frozen=True)
class FusionParams:
    """The inference-path subset of the engine configuration."""

    lambda1: float
    lambda2: float
    beta: float
    tau: float
    negative_sign: float = 1.0
    use_negatives: bool = True

    @classmethod
    def from_config(cls, config: EngineConfig) -> "FusionParams":
        return cls(
            lambda1=config.lambda1,
            lambda2=config.lambda2,
            beta=config.beta,
            tau=config.tau,
            negative_sign=config.negative_term_sign,
            use_negatives=config.use_negatives,
        )


def positive_term(x, params: FusionParams):
    """lambda1 * exp(-beta * (1 - x)): monotone increasing in the cosine."""
    return params.lambda1 * np.exp(-params.beta * (1.0 - np.asarray(x, dtype=np.float64)))


def negative_term(x, params: FusionParams):
    """lambda2 * exp(beta * (1 - x)): monotone decreasing in the cosine."""
    return params.lambda2 * np.exp(params.beta * (1.0 - np.asarray(x, dtype=np.float64)))


def _sim_logit_matrix(features: np.ndarray, proto: PrototypeState,
                      params: FusionParams) -> np.ndarray:
    """(n, d) unit features -> (n, K) fused similarity logits."""
    logits = features @ proto.text.T
    logits = logits + positive_term(features @ proto.pos.T, params)
    if params.use_negatives and proto.neg is not None:
        logits = logits + params.negative_sign * negative_term(
            features @ proto.neg.T, params
        )
    return logits


def fused_logits_sim(f: np.ndarray, proto: PrototypeState, params: FusionParams) -> np.ndarray:
    """Similarity-matching logits for one feature: text cosine plus the
    positive and negative exponential affinity terms. Callers apply
    softmax(logits, tau)."""
    return _sim_logit_matrix(np.asarray(f, dtype=np.float64)[None, :], proto, params)[0]


def _gda_logit_matrix(features: np.ndarray, proto: PrototypeState, model: GdaModel,
                      params: FusionParams) -> np.ndarray:
    logits = features @ proto.text.T
    logits = logits + params.lambda1 * gda_scores_batch(model, features)
    if params.use_negatives and proto.neg is not None:
        logits = logits + params.negative_sign * negative_term(
            features @ proto.neg.T, params
        )
    return logits


def fused_logits_gda(f: np.ndarray, proto: PrototypeState, model: GdaModel,
                     params: FusionParams) -> np.ndarray:
    """Final decision logits: the positive affinity term is replaced by
    lambda1 times the Gaussian discriminant score."""
    return _gda_logit_matrix(np.asarray(f, dtype=np.float64)[None, :], proto, model, params)[0]


def select_views(view_entropies: np.ndarray, rho: float) -> np.ndarray:
    """Indices of the max(1, floor(rho * N)) lowest-entropy views.

    Ties break toward the lower index; the result is sorted ascending so
    downstream reductions have a fixed order.
    """
    ent = np.asarray(view_entropies, dtype=np.float64)
    n = ent.shape[0]
    m = max(1, int(np.floor(rho * n)))
    picked = np.argsort(ent, kind="stable")[:m]
    return np.sort(picked)


def marginal_entropy_loss(selected_dists) -> float:
    """Entropy (nats) of the mean of the selected view distributions."""
    dists = np.asarray(selected_dists, dtype=np.float64)
    if dists.size == 0:
        raise FilterEmpty("no view distributions to aggregate")
    return entropy_unchecked(dists.mean(axis=0))


def inter_text_loss(text: np.ndarray, gamma: float) -> float:
    """Gaussian-kernel overlap of text prototypes over ordered pairs m != n."""
    sq = _pairwise_sq_dists(text)
    kernel = np.exp(-gamma * sq)
    K = text.shape[0]
    return float(kernel.sum() - K)  # remove the diagonal exp(0) terms


def pos_neg_loss(pos: np.ndarray, neg: np.ndarray) -> float:
    """Sum over classes of the cosine between positive and negative rows.

    Inputs are unit rows, so the cosine is the plain row dot product.
    """
    return float(np.einsum("kd,kd->", pos, neg))


def _pairwise_sq_dists(rows: np.ndarray) -> np.ndarray:
    sq_norms = np.einsum("kd,kd->k", rows, rows)
    sq = sq_norms[:, None] + sq_norms[None, :] - 2.0 * rows @ rows.T
    return np.maximum(sq, 0.0)


# ---------------------------------------------------------------------------
# forward/backward over the fixed residual-calibration graph
# ---------------------------------------------------------------------------


def _rownorm_forward(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    unit = normalize_rows(raw, "calibrated prototypes")
    norms = np.linalg.norm(raw, axis=1)
    return unit, norms


def _rownorm_backward(unit: np.ndarray, norms: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    # y = a / ||a||  =>  dL/da = (dL/dy - (dL/dy . y) y) / ||a||
    inner = np.einsum("kd,kd->k", d_unit, unit)
    return (d_unit - inner[:, None] * unit) / norms[:, None]


def _forward_backward(views: np.ndarray, raw_means: np.ndarray, text_rows: np.ndarray,
                      residuals: ResidualSet, config: EngineConfig,
                      need_grads: bool) -> tuple[float, ResidualSet | None]:
    K = config.K
    F = np.asarray(views, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise FilterEmpty("the loss needs at least one selected view")
    m = F.shape[0]
    use_neg = config.use_negatives
    from_calibrated = config.negatives_from == "calibrated"
    sign = config.negative_term_sign
    params = FusionParams.from_config(config)

    # forward: calibrate the three prototype sets
    raw_t = text_rows + residuals.text
    t, norms_t = _rownorm_forward(raw_t)
    raw_p = raw_means + residuals.pos
    vp, norms_p = _rownorm_forward(raw_p)
    if use_neg:
        neg_base = negative_prototypes(vp if from_calibrated else raw_means)
        raw_n = neg_base + residuals.neg
        vn, norms_n = _rownorm_forward(raw_n)
    else:
        vn = None

    # forward: fused similarity logits and the filtered-marginal entropy
    s_t = F @ t.T
    s_p = F @ vp.T
    a_term = positive_term(s_p, params)
    logits = s_t + a_term
    if use_neg:
        s_n = F @ vn.T
        b_term = negative_term(s_n, params)
        logits = logits + sign * b_term
    P = softmax_rows(logits, config.tau)
    p_bar = P.mean(axis=0)
    loss = entropy_unchecked(p_bar)

    # forward: separation regularizers
    if config.xi1 != 0.0:
        sq = _pairwise_sq_dists(t)
        kernel = np.exp(-config.gamma * sq)
        np.fill_diagonal(kernel, 0.0)
        loss += config.xi1 * float(kernel.sum())
    if config.xi2 != 0.0 and use_neg:
        loss += config.xi2 * pos_neg_loss(vp, vn)

    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss value {loss!r}")
    if not need_grads:
        return float(loss), None

    # backward: entropy of the mean, then softmax rows
    with np.errstate(divide="ignore"):
        d_pbar = np.where(p_bar > 0.0, -(np.log(np.where(p_bar > 0.0, p_bar, 1.0)) + 1.0), 0.0)
    dP = np.broadcast_to(d_pbar / m, P.shape)
    inner = np.einsum("nk,nk->n", dP, P)
    d_logits = P * (dP - inner[:, None]) / config.tau

    # backward: the three similarity branches
    d_t = d_logits.T @ F
    d_sp = d_logits * (config.beta * a_term)          # A'(x) = beta * A(x)
    d_vp = d_sp.T @ F
    if use_neg:
        d_sn = d_logits * (sign * -config.beta * b_term)  # B'(x) = -beta * B(x)
        d_vn = d_sn.T @ F
    else:
        d_vn = None

    # backward: regularizers
    if config.xi1 != 0.0:
        row_sums = kernel.sum(axis=1)
        d_t += config.xi1 * (-4.0 * config.gamma) * (row_sums[:, None] * t - kernel @ t)
    if config.xi2 != 0.0 and use_neg:
        d_vp += config.xi2 * vn
        d_vn += config.xi2 * vp

    # backward: normalization chains; the negative base feeds the positives
    if use_neg:
        d_raw_n = _rownorm_backward(vn, norms_n, d_vn)
        g_neg = d_raw_n
        if from_calibrated:
            d_vp += (d_raw_n.sum(axis=0, keepdims=True) - d_raw_n) / (K - 1)
    else:
        g_neg = np.zeros_like(residuals.neg)
    g_pos = _rownorm_backward(vp, norms_p, d_vp)
    g_text = _rownorm_backward(t, norms_t, d_t)

    grads = ResidualSet(text=g_text, pos=g_pos, neg=g_neg)
    if not grads.all_finite():
        raise NumericalError("non-finite residual gradient")
    return float(loss), grads


def total_loss(views: np.ndarray, raw_means: np.ndarray, text_rows: np.ndarray,
               residuals: ResidualSet, config: EngineConfig) -> float:
    """The full objective at the given residuals, on the selected views."""
    loss, _ = _forward_backward(views, raw_means, text_rows, residuals, config, False)
    return loss


def grad_total(views: np.ndarray, raw_means: np.ndarray, text_rows: np.ndarray,
               residuals: ResidualSet, config: EngineConfig) -> ResidualSet:
    """Exact gradients of :func:`total_loss` w.r.t. the three residuals."""
    _, grads = _forward_backward(views, raw_means, text_rows, residuals, config, True)
    return grads


def loss_and_grads(views: np.ndarray, raw_means: np.ndarray, text_rows: np.ndarray,
                   residuals: ResidualSet, config: EngineConfig) -> tuple[float, ResidualSet]:
    loss, grads = _forward_backward(views, raw_means, text_rows, residuals, config, True)
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """AdamW moment accumulators, one (m, v) pair per residual matrix."""

    step: int
    m: ResidualSet
    v: ResidualSet

    @classmethod
    def zeros(cls, K: int, d: int) -> "OptimizerState":
        return cls(step=0, m=ResidualSet.zeros(K, d), v=ResidualSet.zeros(K, d))


def adamw_step(residuals: ResidualSet, grads: ResidualSet, state: OptimizerState,
               config: EngineConfig) -> tuple[ResidualSet, OptimizerState]:
    """One decoupled-weight-decay adaptive-moment update.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2; both bias-corrected;
    param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param).
    Deterministic: no state beyond the passed accumulators.
    """
    step = state.step + 1
    bc1 = 1.0 - config.beta1 ** step
    bc2 = 1.0 - config.beta2 ** step

    def update(param, grad, m, v):
        m_new = config.beta1 * m + (1.0 - config.beta1) * grad
        v_new = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m_new / bc1
        v_hat = v_new / bc2
        step_term = m_hat / (np.sqrt(v_hat) + config.eps_opt)
        param_new = param - config.lr * (step_term + config.weight_decay * param)
        return param_new, m_new, v_new

    new_t, m_t, v_t = update(residuals.text, grads.text, state.m.text, state.v.text)
    new_p, m_p, v_p = update(residuals.pos, grads.pos, state.m.pos, state.v.pos)
    new_n, m_n, v_n = update(residuals.neg, grads.neg, state.m.neg, state.v.neg)
    new_res = ResidualSet(text=new_t, pos=new_p, neg=new_n)
    new_state = OptimizerState(
        step=step,
        m=ResidualSet(text=m_t, pos=m_p, neg=m_n),
        v=ResidualSet(text=v_t, pos=v_p, neg=v_n),
    )
    return new_res, new_state
