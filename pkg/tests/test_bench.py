"""Suite parsing and small benchmark sweeps."""

from __future__ import annotations

import pandas as pd
import pytest

from models.config import PipelineConfig
from models.errors import ConfigurationError
from utils.bench import BenchSuite, load_suite, parse_suite, run_bench


# ── Helpers ──────────────────────────────────────────────────────────────

def _suite(**overrides) -> dict:
    document = {"seed": 1, "n_scenes": 1, "n_points": 3000, "repeat": 1, "workers": 1,
                "sweeps": {"offset_sigma": [0.0]}}
    document.update(overrides)
    return document


# ── Parsing ──────────────────────────────────────────────────────────────

class TestParseSuite:
    def test_valid(self):
        suite = parse_suite(_suite(sweeps={"offset_sigma": [0, 0.01], "selector": ["dks", "fps"],
                                           "filter_background": [True, False], "m_edge_points": [4, 8]}))
        assert isinstance(suite, BenchSuite)
        assert suite.n_points == 3000
        assert suite.sweeps["offset_sigma"] == [0.0, 0.01]
        assert suite.sweeps["m_edge_points"] == [4, 8]
        assert suite.background_share == 0.5

    def test_name_is_allowed(self):
        assert parse_suite(_suite(name="smoke")).seed == 1

    @pytest.mark.parametrize("document, field", [
        (_suite(n_scense=3), "n_scense"),
        (_suite(sweeps={"noise": [0.0]}), "noise"),
        (_suite(sweeps={"selector": ["dks", "random"]}), "selector"),
        (_suite(sweeps={"m_edge_points": [2, 8]}), "m_edge_points"),
        (_suite(sweeps={"m_edge_points": [4.5]}), "m_edge_points"),
        (_suite(sweeps={"offset_sigma": [-0.01]}), "offset_sigma"),
        (_suite(sweeps={"filter_background": ["yes"]}), "filter_background"),
        (_suite(sweeps={"k_keypoints": []}), "k_keypoints"),
        (_suite(n_scenes=0), "n_scenes"),
        (_suite(n_points="many"), "n_points"),
        (_suite(background_share=1.0), "background_share"),
        (_suite(sweeps={}), "sweeps"),
    ])
    def test_errors_name_the_field(self, document, field):
        with pytest.raises(ConfigurationError, match=field):
            parse_suite(document)

    def test_not_a_mapping(self):
        with pytest.raises(ConfigurationError):
            parse_suite(["offset_sigma"])

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="does not exist"):
            load_suite(tmp_path / "suite.yaml")

    def test_load_yaml(self, tmp_path):
        path = tmp_path / "suite.yaml"
        path.write_text("seed: 2\nsweeps:\n  selector: [fps]\n  k_keypoints: [8]\n")
        suite = load_suite(path)
        assert suite.seed == 2
        assert suite.sweeps == {"selector": ["fps"], "k_keypoints": [8]}


# ── Sweeps ───────────────────────────────────────────────────────────────

@pytest.mark.slow
class TestRunBench:
    def test_zero_noise_sweep(self, tmp_path):
        tables = run_bench(parse_suite(_suite()), tmp_path, base=PipelineConfig())
        table = pd.read_csv(tmp_path / "noise.csv")
        assert list(tables) == ["noise"]
        assert len(table) == 1
        assert table.loc[0, "median_add_s_m"] < 1e-6
        assert (tmp_path / "noise.svg").exists()
        assert (tmp_path / "noise_accuracy.svg").exists()

    def test_filter_sweep_reports_identical_poses(self, tmp_path):
        suite = parse_suite(_suite(sweeps={"filter_background": [True, False]}))
        table = run_bench(suite, tmp_path)["timing"]
        assert list(table["filter_background"]) == [True, False]
        assert table["identical_poses"].all()
        assert (tmp_path / "timing.csv").exists()
        assert (tmp_path / "timing.svg").exists()

    def test_suite_from_file(self, tmp_path):
        path = tmp_path / "suite.yaml"
        path.write_text("seed: 0\nn_scenes: 1\nn_points: 2000\nrepeat: 1\nworkers: 1\n"
                        "sweeps:\n  m_edge_points: [4]\n")
        table = run_bench(path, tmp_path / "out")["edge_points"]
        assert list(table["m_edge_points"]) == [4]
        assert (tmp_path / "out" / "edge_points.csv").exists()
