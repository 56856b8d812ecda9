"""TrainConfig validation and JSON round trips."""

import dataclasses
import json

import pytest

from sketchret.config import LossWeights, TrainConfig
from sketchret.errors import ContractViolation


class TestDefaults:
    def test_default_config_is_valid(self):
        TrainConfig().validate()

    def test_reference_scale_defaults(self):
        cfg = TrainConfig()
        assert cfg.alpha == 0.0005
        assert cfg.lambda3 == 0.7
        assert (cfg.m_zinv, cfg.m_zf) == (0.5, 0.3)
        assert cfg.channels == (16, 32, 64, 64)


class TestRoundTrip:
    def test_dict_round_trip(self):
        cfg = TrainConfig(d=32, channels=(8, 16), epochs=10, warmup_epochs=2,
                          lambda1_ramp_last_epochs=3, image_size=32)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert isinstance(again.channels, tuple)

    def test_file_round_trip(self, tmp_path):
        cfg = TrainConfig(seed=123, no_ft=True, lambda2=2.5)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert TrainConfig.load(path) == cfg

    def test_json_is_plain_and_sorted(self, tmp_path):
        path = tmp_path / "cfg.json"
        TrainConfig().save(path)
        data = json.loads(path.read_text())
        assert data["channels"] == [16, 32, 64, 64]
        assert list(data) == sorted(data)

    def test_from_dict_accepts_partial(self):
        cfg = TrainConfig.from_dict({"epochs": 5, "warmup_epochs": 1,
                                     "lambda1_ramp_last_epochs": 2})
        assert cfg.epochs == 5
        assert cfg.d == TrainConfig().d


class TestValidation:
    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ContractViolation, match="phases"):
            TrainConfig.from_dict({"epochs": 5, "phases": 3})

    @pytest.mark.parametrize(
        "overrides",
        [
            {"inner_steps": 0},
            {"meta_batch": 0},
            {"warmup_epochs": 200},               # must stay < epochs
            {"epochs": 10, "warmup_epochs": 10, "lambda1_ramp_last_epochs": 2},
            {"lambda1_ramp_last_epochs": 0},
            {"lambda1_ramp_last_epochs": 500},    # > epochs
            {"image_size": 50},                    # not divisible by 2^len(channels)
            {"no_ft": True, "fixed_ft": True},
            {"lambda2": -0.1},
            {"m_zf": 0.0},
        ],
    )
    def test_bad_field_rejected(self, overrides):
        with pytest.raises(ContractViolation):
            TrainConfig(**overrides).validate()

    def test_zero_lambdas_allowed(self):
        TrainConfig(lambda1_start=0.0, lambda1_end=0.0, lambda2=0.0,
                    lambda3=0.0).validate()


class TestLossWeights:
    def test_mirrors_config_fields(self):
        cfg = TrainConfig(lambda2=3.0, lambda3=0.2, m_zinv=0.9, m_zf=0.1)
        w = cfg.loss_weights()
        assert w == LossWeights(lambda1=cfg.lambda1_start, lambda2=3.0,
                                lambda3=0.2, m_zinv=0.9, m_zf=0.1)

    def test_explicit_lambda1_wins(self):
        assert TrainConfig().loss_weights(lambda1=1.5).lambda1 == 1.5

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractViolation, match="lambda3"):
            LossWeights(lambda3=-1.0).validate()

    def test_margins_must_be_positive(self):
        with pytest.raises(ContractViolation, match="m_zinv"):
            LossWeights(m_zinv=0.0).validate()

    def test_all_fields_covered_by_validate(self):
        # guards against adding a weight field and forgetting its check
        names = {f.name for f in dataclasses.fields(LossWeights)}
        assert names == {"lambda1", "lambda2", "lambda3", "m_zinv", "m_zf"}
