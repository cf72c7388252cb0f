"""Engine configuration: hyperparameters, optimizer settings, ablation toggles."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .exceptions import ConfigMismatch

PSEUDO_LABEL_RULES = ("gda", "sim")
NEGATIVE_SOURCES = ("calibrated", "raw_means")
FINAL_PREDICTION_MODES = ("original", "marginal")


@dataclass
class EngineConfig:
    """Every knob of the adaptation engine.

    ``d`` and ``K`` are the embedding dimension and class count and have no
    useful defaults. Everything else defaults to the standard operating
    point: fusion weights ``lambda1=7, lambda2=0.3``, sharpness ``beta=5``,
    loss weights ``xi1=1, xi2=10``, view filter ratio ``rho=0.1``, text-cache
    momentum ``eta=0.1`` gated at normalized entropy ``tau_t=0.1``, queue
    capacity ``M=12``, and a single AdamW step at ``lr=5e-4`` per sample.

    ``tau`` is the softmax temperature used as a divisor (probability is
    proportional to ``exp(logit / tau)``); the default 0.01 matches the
    conventional logit scale of 100 for unit-norm embedding similarities.

    When ``lambda1``, ``lambda2``, ``xi1`` and ``xi2`` are all zero the
    engine is the plain text-similarity classifier: nothing the residual
    step could feed remains enabled, so the per-sample optimization is
    skipped and predictions match that zero-shot baseline exactly (see
    ``adaptation_disabled``).
    """

    d: int
    K: int
    tau: float = 0.01
    lambda1: float = 7.0
    lambda2: float = 0.3
    beta: float = 5.0
    xi1: float = 1.0
    xi2: float = 10.0
    gamma: float = 2.0
    rho: float = 0.1
    tau_t: float = 0.1
    eta: float = 0.1
    M: int = 12
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    weight_decay: float = 0.0
    eps_cov: float = 1e-3
    n_views: int = 64
    seed: int = 0
    # behavior toggles (each one maps to a CLI ablation flag)
    use_gda: bool = True
    use_negatives: bool = True
    pseudo_label_rule: str = "gda"
    negatives_from: str = "calibrated"
    text_update_on_low_entropy: bool = True
    persist_residuals: bool = False
    final_prediction: str = "original"
    negative_term_sign: float = 1.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Raise ConfigMismatch on any out-of-range field."""
        checks = [
            (self.K >= 2, "K must be >= 2"),
            (self.d >= 2, "d must be >= 2"),
            (self.M >= 1, "M must be >= 1"),
            (0.0 < self.rho <= 1.0, "rho must be in (0, 1]"),
            (self.tau > 0.0, "tau must be positive"),
            (self.eps_cov >= 0.0, "eps_cov must be non-negative"),
            (self.lambda1 >= 0.0, "lambda1 must be non-negative"),
            (self.lambda2 >= 0.0, "lambda2 must be non-negative"),
            (self.beta > 0.0, "beta must be positive"),
            (self.xi1 >= 0.0, "xi1 must be non-negative"),
            (self.xi2 >= 0.0, "xi2 must be non-negative"),
            (self.gamma > 0.0, "gamma must be positive"),
            (0.0 <= self.tau_t <= 1.0, "tau_t must be in [0, 1]"),
            (0.0 <= self.eta <= 1.0, "eta must be in [0, 1]"),
            (self.lr > 0.0, "lr must be positive"),
            (0.0 <= self.beta1 < 1.0, "beta1 must be in [0, 1)"),
            (0.0 <= self.beta2 < 1.0, "beta2 must be in [0, 1)"),
            (self.eps_opt > 0.0, "eps_opt must be positive"),
            (self.weight_decay >= 0.0, "weight_decay must be non-negative"),
            (self.n_views >= 1, "n_views must be >= 1"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.pseudo_label_rule in PSEUDO_LABEL_RULES,
             f"pseudo_label_rule must be one of {PSEUDO_LABEL_RULES}"),
            (self.negatives_from in NEGATIVE_SOURCES,
             f"negatives_from must be one of {NEGATIVE_SOURCES}"),
            (self.final_prediction in FINAL_PREDICTION_MODES,
             f"final_prediction must be one of {FINAL_PREDICTION_MODES}"),
            (self.negative_term_sign in (-1.0, 1.0),
             "negative_term_sign must be -1 or +1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigMismatch(message)

    @property
    def adaptation_disabled(self) -> bool:
        """True when the configuration is the zero-shot operating point.

        With both fusion weights and both separation weights at zero the
        decision rule reduces to text similarity alone and the engine skips
        the residual optimization step entirely.
        """
        return (self.lambda1 == 0.0 and self.lambda2 == 0.0
                and self.xi1 == 0.0 and self.xi2 == 0.0)

    def active_components(self) -> dict[str, bool]:
        """Which parts of the method this configuration actually runs.

        Keys mirror the ablation axes: text cache, positive cache, negative
        prototypes, the Gaussian discriminant rule, and the two separation
        losses.
        """
        return {
            "text_cache": True,
            "positive_cache": True,
            "negative_cache": self.use_negatives,
            "gda": self.use_gda and self.lambda1 > 0.0,
            "inter_text_loss": self.xi1 > 0.0,
            "pos_neg_loss": self.xi2 > 0.0 and self.use_negatives,
        }

    def replace(self, **changes) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigMismatch(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)
