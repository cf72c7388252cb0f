import pytest

from crg.config import EngineConfig
from crg.exceptions import ConfigMismatch


class TestDefaults:
    def test_standard_operating_point(self):
        cfg = EngineConfig(d=8, K=3)
        assert cfg.xi1 == 1.0
        assert cfg.xi2 == 10.0
        assert cfg.lambda1 == 7.0
        assert cfg.lambda2 == 0.3
        assert cfg.tau_t == 0.1
        assert cfg.rho == 0.1
        assert cfg.beta == 5.0
        assert cfg.M == 12
        assert cfg.lr == 0.0005
        assert cfg.tau == 0.01
        assert cfg.eta == 0.1
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)
        assert cfg.eps_opt == 1e-8
        assert cfg.weight_decay == 0.0
        assert cfg.eps_cov == 1e-3
        assert cfg.n_views == 64

    def test_default_toggles(self):
        cfg = EngineConfig(d=8, K=3)
        assert cfg.use_gda and cfg.use_negatives
        assert cfg.pseudo_label_rule == "gda"
        assert cfg.negatives_from == "calibrated"
        assert cfg.text_update_on_low_entropy
        assert not cfg.persist_residuals
        assert cfg.final_prediction == "original"
        assert cfg.negative_term_sign == 1.0


class TestValidation:
    @pytest.mark.parametrize("bad", [
        dict(K=1), dict(d=1), dict(M=0), dict(rho=0.0), dict(rho=1.5),
        dict(tau=0.0), dict(tau=-1.0), dict(eps_cov=-1e-9), dict(lambda1=-1.0),
        dict(lambda2=-0.1), dict(beta=0.0), dict(eta=1.5), dict(tau_t=-0.1),
        dict(lr=0.0), dict(beta1=1.0), dict(beta2=-0.1), dict(eps_opt=0.0),
        dict(weight_decay=-1.0), dict(n_views=0), dict(seed=-1),
        dict(pseudo_label_rule="magic"), dict(negatives_from="thin_air"),
        dict(final_prediction="best_of"), dict(negative_term_sign=0.5),
    ])
    def test_rejects_out_of_range(self, bad):
        base = dict(d=8, K=3)
        base.update(bad)
        with pytest.raises(ConfigMismatch):
            EngineConfig(**base)

    def test_replace_revalidates(self):
        cfg = EngineConfig(d=8, K=3)
        with pytest.raises(ConfigMismatch):
            cfg.replace(rho=2.0)

    def test_dict_round_trip(self):
        cfg = EngineConfig(d=8, K=3, lambda1=2.0, use_gda=False)
        assert EngineConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigMismatch):
            EngineConfig.from_dict({"d": 8, "K": 3, "warp_factor": 9})


class TestDerivedViews:
    def test_adaptation_disabled_detection(self):
        assert EngineConfig(d=8, K=3, lambda1=0, lambda2=0, xi1=0, xi2=0).adaptation_disabled
        assert not EngineConfig(d=8, K=3, lambda2=0, xi1=0, xi2=0).adaptation_disabled
        assert not EngineConfig(d=8, K=3).adaptation_disabled

    def test_active_components_full(self):
        active = EngineConfig(d=8, K=3).active_components()
        assert all(active.values())

    def test_active_components_respect_toggles(self):
        cfg = EngineConfig(d=8, K=3, use_negatives=False, xi1=0.0)
        active = cfg.active_components()
        assert not active["negative_cache"]
        assert not active["inter_text_loss"]
        assert not active["pos_neg_loss"]  # needs negatives to exist
        assert active["gda"]
        cfg = EngineConfig(d=8, K=3, lambda1=0.0)
        assert not cfg.active_components()["gda"]  # weight zero disables the term
