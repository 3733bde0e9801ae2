import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

# Import custom modules
from components.plots import render_accuracy_curve, render_line_chart
from components.report_tables import (eval_table, keypoints_table, loss_history_table, poses_table,
                                      records_table, segmentation_table, timing_table, votes_table,
                                      write_table)
from generators.synth_scene import default_model_set, oracle_predictions, scene_batch, standard_training_set
from models.config import SELECTORS, PipelineConfig, TrainConfig
from models.errors import EXIT_CODES, ConfigurationError, PoseToolkitError, ValidationError
from models.scene import ObjectModel, SceneSample
from utils.bench import run_bench
from utils.config_utils import resolve_configs
from utils.file_formats import (load_checkpoint, read_model_json, read_poses_csv, read_scene_json,
                                read_votes_csv, save_checkpoint, write_depth16, write_model_json,
                                write_scene_json)
from utils.geometry import project_points
from utils.keypoints import select_dynamic_keypoints, select_fps
from utils.metrics import PoseMetrics
from utils.pipeline import PosePipeline
from utils.selfcheck import run_selfcheck
from utils.toy_predictor import count_parameters, featurize, predict_scene, train

# Setup logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

SCENE_PATTERN = "scene_*.json"
CHECKPOINT_NAME = "toy.ckpt"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Flat YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--n-points", type=int)
    common.add_argument("--k-keypoints", type=int)
    common.add_argument("--m-edge-points", type=int)
    common.add_argument("--no-filter-background", action="store_true",
                        help="Let every point take part in clustering (zero weight for non-members)")
    common.add_argument("--selector", choices=SELECTORS)
    common.add_argument("--offset-sigma", type=float, help="Oracle offset noise (meters)")
    common.add_argument("--repeat", type=int, help="Timing repetitions per frame")
    common.add_argument("--workers", type=int)
    common.add_argument("--verbose", action="store_true")

    exit_status = ", ".join(f"{code} {name}" for name, code in EXIT_CODES.items())
    parser = argparse.ArgumentParser(prog="edgevote",
                                     description="Edge-point voting pose estimation on synthetic scenes",
                                     epilog=f"Exit status: {exit_status}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate object models and scenes")
    gen.add_argument("--n-scenes", type=int)

    keypoints = sub.add_parser("keypoints", parents=[common], help="Select keypoints on scenes")
    keypoints.add_argument("--scenes", type=Path, help="Scene file or directory (default: OUT/scenes)")

    estimate = sub.add_parser("estimate", parents=[common], help="Estimate poses of scene objects")
    estimate.add_argument("--scenes", type=Path)
    estimate.add_argument("--checkpoint", type=Path, help="Toy network; oracle predictions when omitted")

    evaluate = sub.add_parser("eval", parents=[common], help="Score a pose table against ground truth")
    evaluate.add_argument("--scenes", type=Path)
    evaluate.add_argument("--poses", type=Path, help="Pose table (default: OUT/poses.csv)")
    evaluate.add_argument("--votes", type=Path, help="Vote table (default: OUT/votes.csv when present)")
    evaluate.add_argument("--checkpoint", type=Path, help="Toy network used for the segmentation score")

    train_toy = sub.add_parser("train-toy", parents=[common], help="Train the toy point-wise network")
    train_toy.add_argument("--scenes", type=Path, help="Training scenes (default: the standard training set)")
    train_toy.add_argument("--epochs", type=int)
    train_toy.add_argument("--learning-rate", type=float)

    bench = sub.add_parser("bench", parents=[common], help="Run a benchmark suite")
    bench.add_argument("--suite", type=Path, required=True, help="Suite YAML file")

    sub.add_parser("selfcheck", parents=[common], help="Run the reduced oracle-equivalence checks")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, object]:
    """Command-line values keyed by config name; None means not given"""
    return {
        "seed": args.seed,
        "n_points": args.n_points,
        "k_keypoints": args.k_keypoints,
        "m_edge_points": args.m_edge_points,
        "filter_background": False if args.no_filter_background else None,
        "selector": args.selector,
        "offset_sigma": args.offset_sigma,
        "repeat": args.repeat,
        "workers": args.workers,
        "n_scenes": getattr(args, "n_scenes", None),
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "learning_rate", None),
    }


# ─── Scene loading ─────────────────────────────────────────────

def scene_files(path: Path) -> List[Path]:
    if path.is_file():
        return [path]
    files = sorted(path.glob(SCENE_PATTERN))
    if not files:
        raise ConfigurationError(f"No scene files found under {path}")
    return files


def load_scenes(path: Path) -> List[SceneSample]:
    """Read scene documents, sharing one ObjectModel per model file"""
    models: Dict[Path, ObjectModel] = {}
    scenes = []
    for scene_path in scene_files(path):
        def load_model(reference: str, base: Path = scene_path.parent) -> ObjectModel:
            model_path = (base / reference).resolve()
            if model_path not in models:
                models[model_path] = read_model_json(model_path)
            return models[model_path]

        scenes.append(read_scene_json(scene_path, load_model))
    logger.info(f"Loaded {len(scenes)} scenes from {path}")
    return scenes


def models_by_class(scenes: List[SceneSample]) -> Dict[int, ObjectModel]:
    models = {}
    for scene in scenes:
        for record in scene.instances:
            models.setdefault(record.class_id, record.model)
    return models


def make_predictor(cfg: PipelineConfig, checkpoint: Optional[Path]):
    if checkpoint is None:
        return lambda scene: oracle_predictions(scene, cfg.noise)
    model = load_checkpoint(checkpoint)
    logger.info(f"Predicting with {checkpoint} ({count_parameters(model)} parameters)")
    return lambda scene: predict_scene(model, scene)


# ─── Commands ──────────────────────────────────────────────────

def cmd_gen(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    model_dir, scene_dir = args.out / "models", args.out / "scenes"
    model_dir.mkdir(parents=True, exist_ok=True)
    scene_dir.mkdir(parents=True, exist_ok=True)

    models = default_model_set(m=cfg.m_edge_points, vertex_count=cfg.vertex_count, seed=cfg.seed)
    for model in models:
        write_model_json(model_dir / f"{model.name}.json", model)
    scenes = scene_batch(models, cfg.n_scenes, cfg.intrinsics, cfg.noise, cfg.n_points,
                         cfg.objects_per_scene, cfg.plane_depth, workers=cfg.workers)
    for scene in scenes:
        stem = f"scene_{scene.scene_id:04d}"
        depth_file = ""
        if scene.depth is not None:
            depth_file = f"{stem}.d16"
            write_depth16(scene_dir / depth_file, scene.depth)
        model_paths = {r.instance_id: f"../models/{r.model.name}.json" for r in scene.instances}
        write_scene_json(scene_dir / f"{stem}.json", scene, model_paths, depth_file)
    logger.info(f"Generated {len(models)} models and {len(scenes)} scenes under {args.out}")


def cmd_keypoints(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    scenes = load_scenes(args.scenes or args.out / "scenes")
    tables = []
    for scene in scenes:
        rows = np.flatnonzero(scene.foreground_mask)
        k = min(cfg.k_keypoints, rows.shape[0])
        if k == 0:
            logger.warning(f"Scene {scene.scene_id}: no foreground points, no keypoints selected")
            continue
        if cfg.selector == "dks":
            selected = select_dynamic_keypoints(featurize(scene).subset(rows), k)
            indices, wins = selected.indices, selected.win_counts
        else:
            indices, wins = rows[select_fps(scene.points[rows], k)], None
        points = scene.points[indices]
        if scene.cloud.source_pixel is not None:
            pixels = scene.cloud.source_pixel[indices]
        else:
            pixels = project_points(scene.intrinsics, points)
        tables.append(keypoints_table(scene.scene_id, indices, points, pixels, wins))
    table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(table, args.out / "keypoints.csv")


def cmd_estimate(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    scenes = load_scenes(args.scenes or args.out / "scenes")
    pipeline = PosePipeline(models_by_class(scenes), cfg)
    predictor = make_predictor(cfg, args.checkpoint)

    if cfg.repeat > 1:
        # Timed runs go one frame at a time
        results = []
        for scene in scenes:
            start = time.perf_counter()
            predictions = predictor(scene)
            prediction_ms = (time.perf_counter() - start) * 1000.0
            results.append(pipeline.estimate_timed(scene, predictions, cfg.repeat, prediction_ms))
    else:
        results = pipeline.estimate_batch(scenes, predictor)

    empty = [r.scene_id for r in results if r.status != "ok"]
    if empty:
        logger.warning(f"Scenes without foreground: {empty}")
    args.out.mkdir(parents=True, exist_ok=True)
    write_table(poses_table(results), args.out / "poses.csv")
    write_table(votes_table(results), args.out / "votes.csv")
    write_table(timing_table([r.timing for r in results]), args.out / "timing.csv")


def cmd_eval(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    scenes = load_scenes(args.scenes or args.out / "scenes")
    poses_path = args.poses or args.out / "poses.csv"
    if not poses_path.exists():
        raise ConfigurationError(f"Pose table {poses_path} does not exist, run estimate first")
    poses = read_poses_csv(poses_path)
    votes_path = args.votes or args.out / "votes.csv"
    votes = read_votes_csv(votes_path) if votes_path.exists() else None
    predictor = make_predictor(cfg, args.checkpoint)

    pipeline = PosePipeline(models_by_class(scenes), cfg)
    report = pipeline.evaluate(poses, scenes, predictions=[predictor(s) for s in scenes], votes=votes)

    args.out.mkdir(parents=True, exist_ok=True)
    table = eval_table(report)
    write_table(table, args.out / "eval.csv")
    write_table(segmentation_table(report), args.out / "segmentation.csv")
    curves = {
        f"class {key.split('/')[0]}": PoseMetrics.accuracy_curve(values, cfg.auc_max_threshold)
        for key, values in report.distances.items() if key.endswith("/add_sym")
    }
    if curves:
        render_accuracy_curve(curves, args.out / "accuracy.svg", "ADD(S) accuracy by class",
                              summary=table[["class_id", "adds_auc", "add_s_auc"]])
    overall = report.row("ALL")
    logger.info(f"ADD-S AUC {overall.adds_auc:.2f}, ADD(S) AUC {overall.add_sym_auc:.2f}, "
                f"mIoU {report.miou:.2f}")


def cmd_train_toy(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    if args.scenes is not None:
        scenes = load_scenes(args.scenes)
        held_out = scenes
    else:
        scenes = standard_training_set(seed=train_cfg.seed, m=cfg.m_edge_points)
        held_out = standard_training_set(seed=train_cfg.seed + 1, n_scenes=2, m=cfg.m_edge_points)

    model, history = train(scenes, train_cfg)
    predicted = np.concatenate([predict_scene(model, s).argmax_labels() for s in held_out])
    truth = np.concatenate([s.class_label for s in held_out])
    miou = PoseMetrics.miou(predicted, truth)
    parameters = count_parameters(model)

    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / CHECKPOINT_NAME, model)
    losses = loss_history_table(history)
    write_table(losses, args.out / "loss_history.csv")
    render_line_chart(losses, "epoch", {"multi-task loss": "loss"}, args.out / "loss_history.svg",
                      "Toy network training", "epoch", "mean loss")
    summary = records_table([{
        "parameters": parameters,
        "epochs": len(history),
        "first_loss": history[0],
        "final_loss": history[-1],
        "held_out_miou": miou,
    }])
    write_table(summary, args.out / "train_summary.csv")
    logger.info(f"Trained {parameters} parameters: loss {history[0]:.4f} -> {history[-1]:.4f}, "
                f"held-out mIoU {miou:.2f}")


def cmd_bench(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    run_bench(args.suite, args.out, base=cfg)


def cmd_selfcheck(args, cfg: PipelineConfig, train_cfg: TrainConfig) -> None:
    results = run_selfcheck(cfg.seed)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise ValidationError(f"Self checks failed: {', '.join(failed)}")
    logger.info(f"All {len(results)} self checks passed")


COMMANDS = {
    "gen": cmd_gen,
    "keypoints": cmd_keypoints,
    "estimate": cmd_estimate,
    "eval": cmd_eval,
    "train-toy": cmd_train_toy,
    "bench": cmd_bench,
    "selfcheck": cmd_selfcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the process exit status"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        cfg, train_cfg = resolve_configs(args.config, overrides_from_args(args))
        COMMANDS[args.command](args, cfg, train_cfg)
    except PoseToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
