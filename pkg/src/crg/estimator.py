"""Scikit-learn style facade over the adaptation engine.

``fit`` primes the caches with one unit-norm text prototype per class;
``predict``/``predict_proba`` then run the online adaptation over the given
samples *in order*, mutating the internal state as a test-time adapter does.
Predictions therefore depend on the order of the stream; call ``fit`` again
to reset.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_feature_matrix, check_view_stack
from .config import EngineConfig
from .data import SampleRecord
from .engine import EngineState, process_sample


class CrgClassifier(ClassifierMixin, BaseEstimator):
    """Online test-time adapting classifier over precomputed embedding views.

    Parameters mirror :class:`crg.config.EngineConfig` one-to-one; see its
    docstring for semantics. The estimator keeps sklearn conventions
    (``get_params``/``set_params``/``clone``) so it composes with pipelines
    and grid utilities, with the caveat that prediction is stateful.

    Examples
    --------
    >>> import numpy as np
    >>> from crg import CrgClassifier
    >>> text = np.eye(4)[:2]
    >>> clf = CrgClassifier(M=4, n_views=1).fit(text)
    >>> clf.predict(np.eye(4)[:1]).tolist()
    [0]
    """

    def __init__(self, *, tau=0.01, lambda1=7.0, lambda2=0.3, beta=5.0,
                 xi1=1.0, xi2=10.0, gamma=2.0, rho=0.1, tau_t=0.1, eta=0.1,
                 M=12, lr=5e-4, beta1=0.9, beta2=0.999, eps_opt=1e-8,
                 weight_decay=0.0, eps_cov=1e-3, n_views=64, seed=0,
                 use_gda=True, use_negatives=True, pseudo_label_rule="gda",
                 negatives_from="calibrated", text_update_on_low_entropy=True,
                 persist_residuals=False, final_prediction="original",
                 negative_term_sign=1.0):
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.beta = beta
        self.xi1 = xi1
        self.xi2 = xi2
        self.gamma = gamma
        self.rho = rho
        self.tau_t = tau_t
        self.eta = eta
        self.M = M
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_opt = eps_opt
        self.weight_decay = weight_decay
        self.eps_cov = eps_cov
        self.n_views = n_views
        self.seed = seed
        self.use_gda = use_gda
        self.use_negatives = use_negatives
        self.pseudo_label_rule = pseudo_label_rule
        self.negatives_from = negatives_from
        self.text_update_on_low_entropy = text_update_on_low_entropy
        self.persist_residuals = persist_residuals
        self.final_prediction = final_prediction
        self.negative_term_sign = negative_term_sign

    def _config(self, d: int, K: int) -> EngineConfig:
        params = {name: getattr(self, name) for name in self.get_params()}
        return EngineConfig(d=d, K=K, **params)

    def fit(self, X, y=None):
        """Prime the caches from the (K, d) class text prototype matrix ``X``.

        ``y`` optionally names the classes (defaults to 0..K-1).
        """
        text = check_feature_matrix(X, name="text prototypes")
        K, d = text.shape
        config = self._config(d, K)
        self.state_ = EngineState.initial(text, config)
        self.classes_ = np.arange(K) if y is None else np.asarray(y)
        if len(self.classes_) != K:
            raise ValueError(f"y names {len(self.classes_)} classes for {K} prototypes")
        self.n_features_in_ = d
        self._next_id = 0
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "state_"):
            raise NotFittedError("this CrgClassifier has not been fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        """Adapt over the samples in order and return their (n, K) posteriors."""
        self._check_fitted()
        stacks = check_view_stack(X, self.n_features_in_)
        out = np.empty((len(stacks), len(self.classes_)))
        for i, views in enumerate(stacks):
            record = SampleRecord(sample_id=self._next_id, true_label=None, views=views)
            self._next_id += 1
            out[i] = process_sample(self.state_, record).probs
        return out

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
