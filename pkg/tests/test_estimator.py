import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from crg.data import SynthConfig, synth_generate
from crg.estimator import CrgClassifier
from crg.exceptions import InvalidInput


def toy_text(K=3, d=8, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(K, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        clf = CrgClassifier(lambda1=3.0, M=7)
        params = clf.get_params()
        assert params["lambda1"] == 3.0 and params["M"] == 7
        clf.set_params(lambda1=5.0)
        assert clf.lambda1 == 5.0

    def test_clone(self):
        clf = CrgClassifier(M=5, use_gda=False)
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            CrgClassifier().predict(np.eye(4))

    def test_fit_sets_attributes(self):
        clf = CrgClassifier().fit(toy_text())
        assert clf.n_features_in_ == 8
        assert clf.classes_.tolist() == [0, 1, 2]

    def test_custom_class_names(self):
        clf = CrgClassifier().fit(toy_text(K=2), y=["cat", "dog"])
        pred = clf.predict(toy_text(K=2)[:1])
        assert pred[0] in ("cat", "dog")

    def test_class_name_count_mismatch(self):
        with pytest.raises(ValueError):
            CrgClassifier().fit(toy_text(K=3), y=["a", "b"])


class TestPrediction:
    def test_proba_shape_and_normalization(self):
        clf = CrgClassifier(n_views=1).fit(toy_text())
        X = toy_text(K=5, d=8, seed=3)  # five single-view samples
        probs = clf.predict_proba(X)
        assert probs.shape == (5, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_accepts_view_stacks(self):
        clf = CrgClassifier().fit(toy_text())
        rng = np.random.default_rng(5)
        stack = rng.normal(size=(4, 6, 8))
        stack /= np.linalg.norm(stack, axis=2, keepdims=True)
        probs = clf.predict_proba(stack)
        assert probs.shape == (4, 3)

    def test_accepts_ragged_view_lists(self):
        clf = CrgClassifier().fit(toy_text())
        rng = np.random.default_rng(6)
        samples = []
        for n in (1, 3, 5):
            views = rng.normal(size=(n, 8))
            samples.append(views / np.linalg.norm(views, axis=1, keepdims=True))
        assert clf.predict(samples).shape == (3,)

    def test_dimension_mismatch_rejected(self):
        clf = CrgClassifier().fit(toy_text(d=8))
        with pytest.raises(InvalidInput):
            clf.predict(np.eye(5))

    def test_refit_resets_state(self):
        cfg = SynthConfig(K=3, d=8, samples=30, seed=7, n_views=2)
        _, text, records = synth_generate(cfg)
        stacks = [r.views for r in records]
        clf = CrgClassifier().fit(text)
        first = clf.predict_proba(stacks)
        clf.fit(text)
        second = clf.predict_proba(stacks)
        np.testing.assert_array_equal(first, second)

    def test_online_adaptation_is_order_dependent_state(self):
        # processing the same sample twice gives a (possibly) different
        # posterior the second time: the cache grew
        clf = CrgClassifier().fit(toy_text())
        x = toy_text(K=1, d=8, seed=9)
        p1 = clf.predict_proba(x)
        p2 = clf.predict_proba(x)
        assert clf.state_.samples_seen == 2
        assert p1.shape == p2.shape

    def test_score_on_separable_stream(self):
        cfg = SynthConfig(K=3, d=16, samples=40, seed=1, class_spread=0.05,
                          view_jitter=0.02, text_jitter=0.05, n_views=2)
        _, text, records = synth_generate(cfg)
        clf = CrgClassifier().fit(text)
        stacks = [r.views for r in records]
        labels = [r.true_label for r in records]
        assert clf.score(stacks, labels) > 0.9
