"""Flat YAML config files, command-line overrides and dataclass validation."""

from __future__ import annotations

import pytest

from models.config import PipelineConfig, TrainConfig
from models.errors import ConfigurationError
from utils.config_utils import build_configs, load_config_file, resolve_configs


# ── Helpers ──────────────────────────────────────────────────────────────

def _config_file(tmp_path, text: str):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return path


# ── Tests ────────────────────────────────────────────────────────────────

class TestLoadConfigFile:
    def test_flat_mapping(self, tmp_path):
        values = load_config_file(_config_file(tmp_path, "n_points: 3000\nselector: fps\n"))
        assert values == {"n_points": 3000, "selector": "fps"}

    def test_empty_file(self, tmp_path):
        assert load_config_file(_config_file(tmp_path, "")) == {}

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="does not exist"):
            load_config_file(tmp_path / "absent.yaml")

    def test_unknown_key_is_named(self, tmp_path):
        with pytest.raises(ConfigurationError, match="'n_pionts'"):
            load_config_file(_config_file(tmp_path, "n_pionts: 3000\n"))

    def test_nested_value(self, tmp_path):
        with pytest.raises(ConfigurationError, match="flat"):
            load_config_file(_config_file(tmp_path, "noise:\n  depth_sigma: 0.001\n"))

    def test_not_a_mapping(self, tmp_path):
        with pytest.raises(ConfigurationError, match="mapping"):
            load_config_file(_config_file(tmp_path, "- 1\n- 2\n"))

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigurationError, match="YAML"):
            load_config_file(_config_file(tmp_path, "n_points: [1, 2\n"))


class TestBuildConfigs:
    def test_defaults(self):
        pipeline, train = build_configs({})
        assert pipeline == PipelineConfig()
        assert train.dks_k == TrainConfig().dks_k
        assert train.lambdas == (3.0, 1.0, 1.0)

    def test_nested_sections(self):
        pipeline, train = build_configs({"w_keypoint": 4, "depth_sigma": 0.002, "fx": 500, "seed": 9})
        assert pipeline.role_weights.w_keypoint == 4.0
        assert pipeline.noise.depth_sigma == 0.002
        assert pipeline.noise.seed == 9
        assert pipeline.intrinsics.fx == 500.0
        assert train.role_weights.w_keypoint == 4.0
        assert train.seed == 9

    def test_shared_settings_reach_trainer(self):
        _, train = build_configs({"lambdas": [0, 0, 1], "selector": "fps", "loss_norm": "l2"})
        assert train.lambdas == (0.0, 0.0, 1.0)
        assert train.selector == "fps"
        assert train.loss_norm == "l2"

    def test_k_keypoints_sets_dks_k(self):
        _, train = build_configs({"k_keypoints": 12})
        assert train.dks_k == 12

    def test_explicit_dks_k_wins(self):
        _, train = build_configs({"k_keypoints": 12, "dks_k": 7})
        assert train.dks_k == 7

    def test_string_values_are_typed(self):
        pipeline, train = build_configs({"filter_background": "false", "lambdas": "1, 2, 3",
                                         "n_points": "800", "hidden_sizes": "16 8"})
        assert pipeline.filter_background is False
        assert pipeline.lambdas == (1.0, 2.0, 3.0)
        assert pipeline.n_points == 800
        assert train.hidden_sizes == (16, 8)

    def test_untypeable_value(self):
        with pytest.raises(ConfigurationError, match="n_points"):
            build_configs({"n_points": "many"})

    @pytest.mark.parametrize("value", [2.7, "2.7", "1e3.5", True, float("nan"), float("inf")])
    def test_lossy_integer_rejected(self, value):
        with pytest.raises(ConfigurationError, match="n_points"):
            build_configs({"n_points": value})

    @pytest.mark.parametrize("value", [3000, 3000.0, "3000", " 3000 ", "3e3"])
    def test_whole_number_accepted(self, value):
        pipeline, _ = build_configs({"n_points": value})
        assert pipeline.n_points == 3000
        assert isinstance(pipeline.n_points, int)

    @pytest.mark.parametrize("values", [
        {"n_points": 0},
        {"m_edge_points": 2},
        {"selector": "random"},
        {"kernel": "epanechnikov"},
        {"center_bandwidth": -0.1},
        {"lambdas": [1, 2]},
        {"w_background": -1},
        {"learning_rate": -0.5},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigurationError):
            build_configs(values)


class TestResolveConfigs:
    def test_precedence(self, tmp_path):
        path = _config_file(tmp_path, "n_points: 3000\nk_keypoints: 10\nseed: 4\n")
        pipeline, train = resolve_configs(path, {"n_points": 500, "seed": None})
        assert pipeline.n_points == 500
        assert pipeline.k_keypoints == 10
        assert pipeline.seed == 4
        assert train.dks_k == 10

    def test_without_file(self):
        pipeline, _ = resolve_configs(None, {"workers": 1})
        assert pipeline.workers == 1

    def test_unknown_override(self):
        with pytest.raises(ConfigurationError, match="'bogus'"):
            resolve_configs(None, {"bogus": 1})
