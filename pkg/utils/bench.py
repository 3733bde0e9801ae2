"""
Benchmark suites: seeded sweeps over prediction noise, edge point count,
background filtering, keypoint selector and loss weighting, written as CSV
tables and SVG figures.

A suite file is YAML with top-level scene settings and a `sweeps` mapping:

    seed: 0
    n_scenes: 10
    n_points: 6000
    sweeps:
      offset_sigma: [0.0, 0.005, 0.02]
      m_edge_points: [4, 8, 12]
      filter_background: [true, false]
      selector: [dks, fps]
      k_keypoints: [8, 25]
      joint_training: [true]
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml

from components.plots import render_accuracy_curve, render_bar_chart, render_line_chart
from components.report_tables import records_table, write_table
from generators.synth_scene import (SMALL_INTRINSICS, default_model_set, oracle_predictions,
                                    scene_batch, standard_training_set, with_background_share)
from models.config import SELECTORS, NoiseConfig, PipelineConfig, TrainConfig
from models.errors import ConfigurationError
from utils.metrics import PoseMetrics
from utils.pipeline import PosePipeline
from utils.toy_predictor import predict_scene, train

# Setup logging
logger = logging.getLogger(__name__)

SWEEP_KEYS = ("offset_sigma", "m_edge_points", "filter_background", "selector", "k_keypoints", "joint_training")
SCENE_KEYS = ("seed", "n_scenes", "n_points", "objects_per_scene", "repeat", "workers",
              "base_offset_sigma", "background_share", "train_epochs", "train_scenes")
JOINT_LAMBDAS = {"semantic_only": (0.0, 0.0, 1.0), "multi_task": (3.0, 1.0, 1.0)}


@dataclass(frozen=True)
class BenchSuite:
    """A validated suite file"""
    seed: int = 0
    n_scenes: int = 10
    n_points: int = 6000
    objects_per_scene: int = 3
    repeat: int = 20
    workers: int = 4
    base_offset_sigma: float = 0.005
    background_share: float = 0.5
    train_epochs: int = 100
    train_scenes: int = 4
    sweeps: Dict[str, List[Any]] = field(default_factory=dict)


def _sweep_values(name: str, values: Any) -> List[Any]:
    if not isinstance(values, list) or not values:
        raise ConfigurationError(f"Sweep field {name!r} must be a nonempty list")
    try:
        if name == "offset_sigma":
            parsed = [float(v) for v in values]
            if any(v < 0 for v in parsed):
                raise ValueError("negative sigma")
        elif name in ("m_edge_points", "k_keypoints"):
            parsed = [int(v) for v in values]
            if any(v != float(o) for v, o in zip(parsed, values)):
                raise ValueError("not an integer")
            if name == "m_edge_points" and any(v < 3 for v in parsed):
                raise ValueError("at least 3 edge points")
            if name == "k_keypoints" and any(v < 0 for v in parsed):
                raise ValueError("negative keypoint count")
        elif name in ("filter_background", "joint_training"):
            if not all(isinstance(v, bool) for v in values):
                raise ValueError("booleans expected")
            parsed = list(values)
        else:
            parsed = [str(v) for v in values]
            if any(v not in SELECTORS for v in parsed):
                raise ValueError(f"selectors are {SELECTORS}")
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid sweep field {name!r}: {e}") from e
    return parsed


def parse_suite(document: Dict[str, Any]) -> BenchSuite:
    """Validate a suite mapping; errors name the offending field"""
    if not isinstance(document, dict):
        raise ConfigurationError("Suite file must be a mapping")
    unknown = sorted(set(document) - set(SCENE_KEYS) - {"sweeps", "name"})
    if unknown:
        raise ConfigurationError(f"Unknown suite field {unknown[0]!r}")
    sweeps_raw = document.get("sweeps", {})
    if not isinstance(sweeps_raw, dict) or not sweeps_raw:
        raise ConfigurationError("Suite field 'sweeps' must be a nonempty mapping")
    sweeps = {}
    for name, values in sweeps_raw.items():
        if name not in SWEEP_KEYS:
            raise ConfigurationError(f"Unknown sweep field {name!r}")
        sweeps[name] = _sweep_values(name, values)

    defaults = BenchSuite()
    settings = {}
    for key in SCENE_KEYS:
        if key not in document:
            continue
        kind = type(getattr(defaults, key))
        try:
            settings[key] = kind(document[key])
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid suite field {key!r}: {document[key]!r}") from e
        if settings[key] < 0 or (kind is int and key != "seed" and settings[key] == 0):
            raise ConfigurationError(f"Invalid suite field {key!r}: {document[key]!r}")
    if not 0.0 <= settings.get("background_share", defaults.background_share) < 1.0:
        raise ConfigurationError("Invalid suite field 'background_share': must lie in [0, 1)")
    return BenchSuite(sweeps=sweeps, **settings)


def load_suite(path: Union[str, Path]) -> BenchSuite:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Suite file {path} does not exist")
    try:
        document = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Suite file {path} is not valid YAML: {e}") from e
    return parse_suite(document)


class BenchRunner:
    """Runs the sweeps of one suite and writes their artifacts"""

    def __init__(self, suite: BenchSuite, base: PipelineConfig = PipelineConfig()):
        self.suite = suite
        self.base = replace(base, seed=suite.seed, n_points=suite.n_points, repeat=suite.repeat,
                            workers=suite.workers, objects_per_scene=suite.objects_per_scene)

    def _scenes(self, cfg: PipelineConfig, models):
        noise = NoiseConfig(seed=self.suite.seed)
        return scene_batch(models, self.suite.n_scenes, cfg.intrinsics, noise, cfg.n_points,
                           cfg.objects_per_scene, cfg.plane_depth, workers=self.suite.workers)

    def _evaluate(self, cfg: PipelineConfig, models, scenes, predictor):
        pipeline = PosePipeline({m.class_id: m for m in models}, cfg)
        results = pipeline.estimate_batch(scenes, predictor, workers=self.suite.workers)
        estimates = [estimate for result in results for estimate in result.poses]
        report = pipeline.evaluate(estimates, scenes, timings=[r.timing for r in results])
        return report, results

    @staticmethod
    def _summary(report) -> Dict[str, float]:
        row = report.row("ALL")
        add_sym = np.concatenate([v for k, v in report.distances.items() if k.endswith("/add_sym")])
        return {
            "median_add_s_m": float(np.median(add_sym)),
            "adds_auc": row.adds_auc,
            "add_s_auc": row.add_sym_auc,
            "add_s_01d": row.add01d_rate,
            "kp_err_m": row.kp_err_m,
            "n_instances": row.n_instances,
        }

    # ─── Sweeps ────────────────────────────────────────────────

    def sweep_offset_sigma(self, values: List[float], out_dir: Path) -> pd.DataFrame:
        models = default_model_set(m=self.base.m_edge_points, vertex_count=self.base.vertex_count,
                                   seed=self.suite.seed)
        scenes = self._scenes(self.base, models)
        records, curves = [], {}
        for sigma in values:
            noise = NoiseConfig(offset_sigma=sigma, seed=self.suite.seed)
            report, _ = self._evaluate(self.base, models, scenes, lambda s, n=noise: oracle_predictions(s, n))
            records.append({"offset_sigma": sigma, **self._summary(report)})
            add_sym = np.concatenate([v for k, v in report.distances.items() if k.endswith("/add_sym")])
            curves[f"sigma={sigma * 1000:g} mm"] = PoseMetrics.accuracy_curve(add_sym, self.base.auc_max_threshold)
            logger.info(f"offset_sigma={sigma}: ADD(S) AUC {records[-1]['add_s_auc']:.2f}")
        table = records_table(records)
        write_table(table, out_dir / "noise.csv")
        render_line_chart(table, "offset_sigma", {"median ADD(S)": "median_add_s_m"}, out_dir / "noise.svg",
                          "Prediction noise vs pose error", "offset sigma (m)", "median ADD(S) (m)")
        render_accuracy_curve(curves, out_dir / "noise_accuracy.svg",
                              summary=table[["offset_sigma", "adds_auc", "add_s_auc"]])
        return table

    def sweep_m_edge_points(self, values: List[int], out_dir: Path) -> pd.DataFrame:
        records = []
        noise = NoiseConfig(offset_sigma=self.suite.base_offset_sigma, seed=self.suite.seed)
        for m in values:
            cfg = replace(self.base, m_edge_points=m)
            models = default_model_set(m=m, vertex_count=cfg.vertex_count, seed=self.suite.seed)
            scenes = self._scenes(cfg, models)
            report, _ = self._evaluate(cfg, models, scenes, lambda s: oracle_predictions(s, noise))
            records.append({"m_edge_points": m, **self._summary(report)})
        table = records_table(records)
        write_table(table, out_dir / "edge_points.csv")
        render_line_chart(table, "m_edge_points", {"ADD-S AUC": "adds_auc", "ADD(S) AUC": "add_s_auc"},
                          out_dir / "edge_points.svg", "Edge point count", "M", "AUC (%)")
        return table

    def sweep_filter_background(self, values: List[bool], out_dir: Path) -> pd.DataFrame:
        """Pose-estimation time with and without background filtering (single worker)"""
        models = default_model_set(m=self.base.m_edge_points, vertex_count=self.base.vertex_count,
                                   seed=self.suite.seed)
        scenes = [with_background_share(s, self.suite.background_share, self.suite.seed)
                  for s in self._scenes(self.base, models)]
        predictions = [oracle_predictions(s, NoiseConfig(seed=self.suite.seed)) for s in scenes]
        model_map = {m.class_id: m for m in models}

        poses_by_mode = {}
        records = []
        for flag in values:
            pipeline = PosePipeline(model_map, replace(self.base, filter_background=flag))
            results = [pipeline.estimate_timed(s, p, self.suite.repeat) for s, p in zip(scenes, predictions)]
            poses_by_mode[flag] = [np.concatenate([e.pose.as_row() for e in r.poses]) if r.poses else np.zeros(0)
                                   for r in results]
            records.append({
                "filter_background": flag,
                "background_share": self.suite.background_share,
                "pose_estimation_ms": float(np.median([r.timing.pose_estimation_ms for r in results])),
                "n_poses": sum(len(r.poses) for r in results),
            })
        if len(poses_by_mode) == 2:
            identical = all(np.array_equal(a, b) for a, b in zip(poses_by_mode[True], poses_by_mode[False]))
            for record in records:
                record["identical_poses"] = identical
            if not identical:
                logger.warning("Filtered and unfiltered runs produced different poses")
        table = records_table(records)
        write_table(table, out_dir / "timing.csv")
        render_bar_chart(table, "filter_background", ["pose_estimation_ms"], out_dir / "timing.svg",
                         "Pose estimation time", "ms per frame")
        return table

    def sweep_keypoint_selector(self, selectors: List[str], ks: List[int], out_dir: Path) -> pd.DataFrame:
        """Toy predictor trained per (selector, K), scored on held-out scenes"""
        training = standard_training_set(seed=self.suite.seed, n_scenes=self.suite.train_scenes,
                                         m=self.base.m_edge_points)
        held_out = standard_training_set(seed=self.suite.seed + 1000, n_scenes=self.suite.train_scenes,
                                         m=self.base.m_edge_points)
        models = {r.class_id: r.model for s in training for r in s.instances}
        cfg = replace(self.base, intrinsics=SMALL_INTRINSICS, min_cluster_size=10)
        records = []
        for selector in selectors:
            for k in ks:
                train_cfg = TrainConfig(epochs=self.suite.train_epochs, seed=self.suite.seed,
                                        dks_k=k, selector=selector)
                model, history = train(training, train_cfg)
                pipeline = PosePipeline(models, cfg)
                results = pipeline.estimate_batch(held_out, lambda s: predict_scene(model, s), workers=1)
                estimates = [e for r in results for e in r.poses]
                report = pipeline.evaluate(estimates, held_out)
                row = report.row("ALL")
                records.append({
                    "selector": selector, "k": k, "kp_err_m": row.kp_err_m,
                    "adds_auc": row.adds_auc, "add_s_auc": row.add_sym_auc, "final_loss": history[-1],
                })
                logger.info(f"selector={selector} K={k}: kp error {row.kp_err_m:.4f} m")
        table = records_table(records)
        write_table(table, out_dir / "keypoints.csv")
        table_plot = table.assign(config=table["selector"] + "-" + table["k"].astype(str))
        render_bar_chart(table_plot, "config", ["kp_err_m"], out_dir / "keypoints.svg",
                         "Keypoint error by selector", "mean edge point error (m)")
        return table

    def sweep_joint_training(self, out_dir: Path) -> pd.DataFrame:
        """Semantic-only vs multi-task training, compared on held-out mIoU"""
        training = standard_training_set(seed=self.suite.seed, n_scenes=self.suite.train_scenes,
                                         m=self.base.m_edge_points)
        held_out = standard_training_set(seed=self.suite.seed + 1000, n_scenes=self.suite.train_scenes,
                                         m=self.base.m_edge_points)
        records = []
        for name, lambdas in JOINT_LAMBDAS.items():
            model, history = train(training, TrainConfig(epochs=self.suite.train_epochs, seed=self.suite.seed,
                                                         lambdas=lambdas))
            predicted = np.concatenate([predict_scene(model, s).argmax_labels() for s in held_out])
            truth = np.concatenate([s.class_label for s in held_out])
            records.append({"training": name, "lambda_edge": lambdas[0], "lambda_center": lambdas[1],
                            "lambda_semantic": lambdas[2], "miou": PoseMetrics.miou(predicted, truth),
                            "final_loss": history[-1]})
        table = records_table(records)
        write_table(table, out_dir / "joint_training.csv")
        render_bar_chart(table, "training", ["miou"], out_dir / "joint_training.svg",
                         "Segmentation quality by training objective", "mIoU (%)")
        return table

    def run(self, out_dir: Union[str, Path]) -> Dict[str, pd.DataFrame]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sweeps = self.suite.sweeps
        tables = {}
        if "offset_sigma" in sweeps:
            tables["noise"] = self.sweep_offset_sigma(sweeps["offset_sigma"], out_dir)
        if "m_edge_points" in sweeps:
            tables["edge_points"] = self.sweep_m_edge_points(sweeps["m_edge_points"], out_dir)
        if "filter_background" in sweeps:
            tables["timing"] = self.sweep_filter_background(sweeps["filter_background"], out_dir)
        if "selector" in sweeps or "k_keypoints" in sweeps:
            tables["keypoints"] = self.sweep_keypoint_selector(
                sweeps.get("selector", [self.base.selector]), sweeps.get("k_keypoints", [self.base.k_keypoints]),
                out_dir)
        if sweeps.get("joint_training") and any(sweeps["joint_training"]):
            tables["joint_training"] = self.sweep_joint_training(out_dir)
        logger.info(f"Bench finished: {', '.join(tables)} written to {out_dir}")
        return tables


def run_bench(suite: Union[BenchSuite, str, Path], out_dir: Union[str, Path],
              base: Optional[PipelineConfig] = None) -> Dict[str, pd.DataFrame]:
    """Load (if needed) and run a suite; returns the tables by name"""
    if not isinstance(suite, BenchSuite):
        suite = load_suite(suite)
    return BenchRunner(suite, base or PipelineConfig()).run(out_dir)
