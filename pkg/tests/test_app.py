"""Command-line surface: subcommands, artifacts and exit codes."""

from __future__ import annotations

import pandas as pd
import pytest

import app
from models.errors import TrainingDivergedError

SMALL_RUN = ["--n-points", "6000", "--repeat", "1", "--workers", "1", "--seed", "2"]


# ── Helpers ──────────────────────────────────────────────────────────────

def _run(command: str, out, *extra: str) -> int:
    return app.main([command, "--out", str(out), *SMALL_RUN, *extra])


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert _run("gen", out, "--n-scenes", "2") == 0
    return out


# ── Tests ────────────────────────────────────────────────────────────────

class TestGen:
    def test_layout(self, generated):
        assert sorted(p.name for p in (generated / "models").glob("*.json")) == \
            ["box_0.json", "cylinder_1.json", "lshape_3.json", "sphere_2.json"]
        scenes = sorted((generated / "scenes").glob("scene_*.json"))
        assert [p.name for p in scenes] == ["scene_0000.json", "scene_0001.json"]
        assert (generated / "scenes" / "scene_0000.d16").exists()

    def test_reproducible(self, generated, tmp_path):
        assert _run("gen", tmp_path, "--n-scenes", "2") == 0
        for name in ("scene_0000.json", "scene_0001.json"):
            assert (tmp_path / "scenes" / name).read_bytes() == (generated / "scenes" / name).read_bytes()

    def test_scenes_load_back(self, generated):
        scenes = app.load_scenes(generated / "scenes")
        assert [s.scene_id for s in scenes] == [0, 1]
        models = app.models_by_class(scenes)
        shared = [r.model for s in scenes for r in s.instances if r.class_id == next(iter(models))]
        assert all(m is shared[0] for m in shared)


class TestPipelineCommands:
    def test_estimate_then_eval(self, generated, tmp_path):
        scenes = str(generated / "scenes")
        assert _run("estimate", tmp_path, "--scenes", scenes) == 0
        poses = pd.read_csv(tmp_path / "poses.csv")
        assert len(poses) > 0
        assert list(pd.read_csv(tmp_path / "timing.csv")["stage"]) == ["prediction", "pose_estimation", "total"]

        assert _run("eval", tmp_path, "--scenes", scenes) == 0
        table = pd.read_csv(tmp_path / "eval.csv")
        assert table["class_id"].iloc[-1] == "ALL"
        assert table["add_s_auc"].iloc[-1] > 90.0
        assert (tmp_path / "segmentation.csv").exists()
        assert (tmp_path / "accuracy.svg").exists()

    def test_estimate_outputs_are_byte_identical(self, generated, tmp_path):
        scenes = str(generated / "scenes")
        assert _run("estimate", tmp_path / "a", "--scenes", scenes, "--offset-sigma", "0.003") == 0
        assert app.main(["estimate", "--out", str(tmp_path / "b"), "--scenes", scenes, "--n-points", "6000",
                         "--repeat", "1", "--workers", "2", "--seed", "2", "--offset-sigma", "0.003"]) == 0
        for name in ("poses.csv", "votes.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_filter_flag_keeps_poses(self, generated, tmp_path):
        scenes = str(generated / "scenes")
        assert _run("estimate", tmp_path / "a", "--scenes", scenes) == 0
        assert _run("estimate", tmp_path / "b", "--scenes", scenes, "--no-filter-background") == 0
        assert (tmp_path / "a" / "poses.csv").read_bytes() == (tmp_path / "b" / "poses.csv").read_bytes()

    @pytest.mark.parametrize("selector", ["dks", "fps"])
    def test_keypoints(self, generated, tmp_path, selector):
        assert _run("keypoints", tmp_path, "--scenes", str(generated / "scenes"),
                    "--selector", selector, "--k-keypoints", "10") == 0
        table = pd.read_csv(tmp_path / "keypoints.csv")
        assert list(table.groupby("scene_id").size()) == [10, 10]
        assert ("win_count" in table.columns) == (selector == "dks")

    def test_eval_without_poses(self, generated, tmp_path):
        assert _run("eval", tmp_path, "--scenes", str(generated / "scenes")) == 2


class TestTrainToy:
    def test_short_run(self, tmp_path):
        assert _run("train-toy", tmp_path, "--epochs", "2") == 0
        summary = pd.read_csv(tmp_path / "train_summary.csv")
        assert summary.loc[0, "epochs"] == 2
        assert summary.loc[0, "parameters"] > 0
        assert len(pd.read_csv(tmp_path / "loss_history.csv")) == 2
        assert (tmp_path / "toy.ckpt").exists()
        assert (tmp_path / "loss_history.svg").exists()

    def test_checkpoint_class_mismatch(self, generated, tmp_path):
        assert _run("train-toy", tmp_path, "--epochs", "1") == 0
        code = _run("estimate", tmp_path, "--scenes", str(generated / "scenes"),
                    "--checkpoint", str(tmp_path / "toy.ckpt"))
        assert code == 2

    def test_divergence_exit_code(self, tmp_path, monkeypatch):
        def diverge(scenes, cfg):
            raise TrainingDivergedError(1, float("nan"))

        monkeypatch.setattr(app, "train", diverge)
        assert _run("train-toy", tmp_path, "--epochs", "1") == 5


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert app.main(["selfcheck", "--config", str(tmp_path / "absent.yaml")]) == 2

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("n_pionts: 10\n")
        assert app.main(["selfcheck", "--config", str(path)]) == 2

    def test_invalid_override(self, tmp_path):
        assert _run("gen", tmp_path, "--m-edge-points", "2") == 2

    def test_no_scenes(self, tmp_path):
        assert _run("estimate", tmp_path, "--scenes", str(tmp_path)) == 2

    def test_invalid_suite(self, tmp_path):
        path = tmp_path / "suite.yaml"
        path.write_text("sweeps:\n  selector: [random]\n")
        assert _run("bench", tmp_path, "--suite", str(path)) == 2

    def test_corrupt_scene(self, tmp_path):
        (tmp_path / "scene_0000.json").write_text('{"format_version": 7}')
        assert _run("estimate", tmp_path, "--scenes", str(tmp_path)) == 3

    def test_unexpected_error(self, tmp_path, monkeypatch):
        def broken(args, cfg, train_cfg):
            raise RuntimeError("boom")

        monkeypatch.setitem(app.COMMANDS, "selfcheck", broken)
        assert app.main(["selfcheck", "--out", str(tmp_path)]) == 1

    def test_missing_command(self):
        with pytest.raises(SystemExit) as excinfo:
            app.main([])
        assert excinfo.value.code == 2

    @pytest.mark.slow
    def test_selfcheck_passes(self):
        assert app.main(["selfcheck"]) == 0
