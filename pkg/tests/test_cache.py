import math

import numpy as np
import pytest

from crg.cache import (
    DISCARDED,
    INSERTED,
    REPLACED,
    CacheEntry,
    PositiveCache,
    TextCache,
    init_caches,
)
from crg.config import EngineConfig
from crg.exceptions import ConfigMismatch

RNG = np.random.default_rng(7)


def make_config(K=3, d=4, M=2, **kw):
    return EngineConfig(d=d, K=K, M=M, **kw)


def unit_rows(K, d, rng=RNG):
    rows = rng.normal(size=(K, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def entry(h, sid=0, label=None, d=4):
    return CacheEntry(feature=np.zeros(d), entropy=h, sample_id=sid, true_label=label)


class BruteForceQueue:
    """Replay simulator: a plain list with linear scans, the policy oracle."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.items = []  # (entropy, arrival, payload)
        self.arrival = 0

    def offer(self, h, payload):
        self.arrival += 1
        if len(self.items) < self.capacity:
            self.items.append((h, self.arrival, payload))
            return "inserted"
        worst = max(self.items, key=lambda it: (it[0], -it[1]))  # max h, oldest on ties
        if h < worst[0]:
            self.items.remove(worst)
            self.items.append((h, self.arrival, payload))
            return "replaced"
        return "discarded"

    def multiset(self):
        return sorted((h, payload) for h, _, payload in self.items)


class TestInitCaches:
    def test_seeded_with_sentinels(self):
        cfg = make_config(K=3, d=4)
        cache, text = init_caches(unit_rows(3, 4), cfg)
        for k in range(3):
            assert cache.size(k) == 1
            only = cache.entries(k)[0]
            assert only.is_sentinel
            assert only.entropy == pytest.approx(math.log(3), abs=1e-12)

    def test_k1_rejected_by_config(self):
        with pytest.raises(ConfigMismatch):
            make_config(K=1, d=4)

    def test_identity_basis_construction(self):
        cfg = make_config(K=2, d=2)
        t = np.eye(2)
        cache, text = init_caches(t, cfg)
        np.testing.assert_array_equal(cache.entries(0)[0].feature, [1.0, 0.0])
        np.testing.assert_array_equal(cache.entries(1)[0].feature, [0.0, 1.0])
        assert cache.entries(0)[0].entropy == pytest.approx(math.log(2))
        np.testing.assert_array_equal(text.prototypes, t)

    def test_shape_mismatch_rejected(self):
        cfg = make_config(K=3, d=4)
        with pytest.raises(ConfigMismatch):
            init_caches(unit_rows(2, 4), cfg)

    def test_non_unit_rows_rejected(self):
        cfg = make_config(K=3, d=4)
        with pytest.raises(ConfigMismatch):
            init_caches(unit_rows(3, 4) * 1.5, cfg)


class TestInsertPolicy:
    def test_replaces_worst_when_lower(self):
        cfg = make_config(K=2, d=4, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, entry(0.9, sid=1))
        cache.insert(0, entry(0.5, sid=2))
        outcome = cache.insert(0, entry(0.3, sid=3))
        assert outcome.kind == REPLACED
        assert outcome.evicted.entropy == 0.9
        assert sorted(e.entropy for e in cache.entries(0)) == [0.3, 0.5]

    def test_discards_higher_entropy(self):
        cfg = make_config(K=2, d=4, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, entry(0.9))
        cache.insert(0, entry(0.5))
        outcome = cache.insert(0, entry(1.0))
        assert outcome.kind == DISCARDED
        assert sorted(e.entropy for e in cache.entries(0)) == [0.5, 0.9]

    def test_inserts_into_partial_queue(self):
        cfg = make_config(K=2, d=4, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, entry(0.9))
        outcome = cache.insert(0, entry(1.2))
        assert outcome.kind == INSERTED
        assert cache.size(0) == 2

    def test_tie_discards_newcomer(self):
        cfg = make_config(K=2, d=4, M=1)
        cache = PositiveCache(cfg)
        cache.insert(0, entry(0.5, sid=1))
        outcome = cache.insert(0, entry(0.5, sid=2))
        assert outcome.kind == DISCARDED
        assert cache.entries(0)[0].sample_id == 1

    def test_bad_class_index(self):
        cache = PositiveCache(make_config())
        with pytest.raises(IndexError):
            cache.insert(5, entry(0.1))

    def test_worst_matches_full_scan(self):
        cfg = make_config(K=2, d=4, M=8)
        cache = PositiveCache(cfg)
        for i in range(40):
            cache.insert(0, entry(float(RNG.uniform(0, 2)), sid=i))
            scan_max = max(e.entropy for e in cache.entries(0))
            assert cache.worst(0).entropy == scan_max
            assert cache.size(0) <= 8

    def test_policy_matches_brute_force_replay(self):
        # the acceptance criterion runs 1000 sequences; keep a fast mirror here
        for trial in range(200):
            rng = np.random.default_rng(trial)
            M = int(rng.integers(1, 6))
            cfg = make_config(K=2, d=2, M=M)
            cache = PositiveCache(cfg)
            oracle = BruteForceQueue(M)
            n = int(rng.integers(1, 40))
            entropies = np.round(rng.uniform(0, 1, size=n), 2)  # rounding forces ties
            for i, h in enumerate(entropies):
                got = cache.insert(0, entry(float(h), sid=i)).kind
                want = oracle.offer(float(h), i)
                assert got == want, f"trial {trial}, step {i}"
            mine = sorted((e.entropy, e.sample_id) for e in cache.entries(0))
            assert mine == oracle.multiset(), f"trial {trial}"

    def test_sentinel_evicted_first(self):
        cfg = make_config(K=2, d=2, M=3)
        cache, _ = init_caches(np.eye(2), cfg)
        below = math.log(2) - 0.01
        for i in range(3):
            cache.insert(0, entry(below - i * 0.05, sid=i, d=2))
        assert all(not e.is_sentinel for e in cache.entries(0))
        # the other queue still holds its sentinel
        assert cache.entries(1)[0].is_sentinel


class TestClassMeans:
    def test_singleton_mean(self):
        cfg = make_config(K=2, d=2, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, CacheEntry(np.array([1.0, 0.0]), 0.1, 1))
        cache.insert(1, CacheEntry(np.array([0.0, 1.0]), 0.1, 2))
        np.testing.assert_array_equal(cache.class_means(), np.eye(2))

    def test_midpoint(self):
        cfg = make_config(K=2, d=2, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, CacheEntry(np.array([1.0, 0.0]), 0.1, 1))
        cache.insert(0, CacheEntry(np.array([0.0, 1.0]), 0.2, 2))
        cache.insert(1, CacheEntry(np.array([0.0, 1.0]), 0.1, 3))
        np.testing.assert_allclose(cache.class_means()[0], [0.5, 0.5])

    def test_empty_queue_is_invariant_violation(self):
        from crg.exceptions import InternalInvariantViolation

        cache = PositiveCache(make_config())  # not seeded
        with pytest.raises(InternalInvariantViolation):
            cache.class_means()
        with pytest.raises(InternalInvariantViolation):
            cache.worst(0)

    def test_antipodal_features_give_zero_mean(self):
        cfg = make_config(K=2, d=2, M=2)
        cache = PositiveCache(cfg)
        cache.insert(0, CacheEntry(np.array([1.0, 0.0]), 0.1, 1))
        cache.insert(0, CacheEntry(np.array([-1.0, 0.0]), 0.2, 2))
        cache.insert(1, CacheEntry(np.array([0.0, 1.0]), 0.1, 3))
        np.testing.assert_array_equal(cache.class_means()[0], [0.0, 0.0])
        # downstream zero-residual calibration must surface the degeneracy
        from crg.exceptions import DegenerateVector
        from crg.prototypes import ResidualSet, build_prototype_state

        with pytest.raises(DegenerateVector):
            build_prototype_state(cache.class_means(), np.eye(2),
                                  ResidualSet.zeros(2, 2), cfg)


class TestErrorRateCounter:
    def test_matches_recount_under_churn(self):
        cfg = make_config(K=3, d=2, M=3)
        cache, _ = init_caches(unit_rows(3, 2), cfg)
        for i in range(200):
            k = int(RNG.integers(3))
            true = int(RNG.integers(3)) if RNG.random() < 0.8 else None
            cache.insert(k, CacheEntry(unit_rows(1, 2)[0], float(RNG.uniform(0, 1.0)),
                                       sample_id=i, true_label=true))
            labeled = mislabeled = 0
            for q in range(3):
                for e in cache.entries(q):
                    if e.is_sentinel or e.true_label is None:
                        continue
                    labeled += 1
                    mislabeled += int(e.true_label != q)
            expected = mislabeled / labeled if labeled else 0.0
            assert cache.error_rate() == pytest.approx(expected, abs=0)


class TestTextCacheMomentum:
    def test_threshold_not_met(self):
        cfg = make_config()
        rows = unit_rows(3, 4)
        tc = TextCache(rows)
        assert tc.momentum_update(unit_rows(3, 4), 0.5, cfg) is False
        np.testing.assert_array_equal(tc.prototypes, rows)

    def test_fixed_point(self):
        cfg = make_config()
        rows = unit_rows(3, 4)
        tc = TextCache(rows)
        assert tc.momentum_update(rows.copy(), 0.05, cfg) is True
        np.testing.assert_allclose(tc.prototypes, rows, atol=1e-12)

    def test_full_replacement_at_eta_one(self):
        cfg = make_config(eta=1.0)
        tc = TextCache(unit_rows(3, 4))
        target = unit_rows(3, 4, np.random.default_rng(99))
        tc.momentum_update(target, 0.05, cfg)
        np.testing.assert_allclose(tc.prototypes, target, atol=1e-12)

    def test_rows_stay_unit(self):
        cfg = make_config()
        tc = TextCache(unit_rows(3, 4))
        for i in range(50):
            tc.momentum_update(unit_rows(3, 4, np.random.default_rng(i)), 0.0, cfg)
            np.testing.assert_allclose(np.linalg.norm(tc.prototypes, axis=1), 1.0, atol=1e-9)

    def test_eta_zero_is_bitwise_noop(self):
        cfg = make_config(eta=0.0)
        rows = unit_rows(3, 4)
        tc = TextCache(rows)
        assert tc.momentum_update(unit_rows(3, 4), 0.0, cfg) is False
        np.testing.assert_array_equal(tc.prototypes, rows)

    def test_flipped_gate(self):
        cfg = make_config(text_update_on_low_entropy=False)
        tc = TextCache(unit_rows(3, 4))
        assert tc.momentum_update(unit_rows(3, 4), 0.05, cfg) is False
        assert tc.momentum_update(unit_rows(3, 4), 0.5, cfg) is True
