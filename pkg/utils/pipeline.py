import concurrent.futures
import logging
import time
from dataclasses import replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from models.config import PipelineConfig
from models.errors import ConfigurationError, DegenerateCorrespondenceError
from models.predictions import InstanceHypothesis, PredictionField
from models.results import (ClassRow, EstimateResult, EvalReport, PoseEstimate,
                            TimingBreakdown)
from models.scene import BACKGROUND, ObjectModel, SceneSample
from utils.metrics import PoseMetrics
from utils.voting import cluster_instances, estimate_pose, vote_edge_points

# Setup logging
logger = logging.getLogger(__name__)

Predictor = Callable[[SceneSample], PredictionField]


class PosePipeline:
    """
    Point-wise predictions to object poses, and poses to evaluation tables.

    Per frame: background filtering, instance clustering on the voted
    centers, edge point voting per instance, least-squares pose fit.
    """

    def __init__(self, models: Mapping[int, ObjectModel], cfg: PipelineConfig = PipelineConfig()):
        """
        Args:
            models: Object model per class id
            cfg: Pipeline settings
        """
        self.models = dict(models)
        self.cfg = cfg

    # ─── Estimation ────────────────────────────────────────────

    def estimate(self, scene: SceneSample, predictions: PredictionField,
                 prediction_ms: float = 0.0) -> EstimateResult:
        """
        Estimate the pose of every instance in one frame.

        With filtering on, only rows predicted as the voting class take part
        in mean shift; with filtering off every row does but non-members
        carry zero weight. Both modes yield identical poses.

        Args:
            scene: Frame (positions, and ground-truth instance labels for matching)
            predictions: Point-wise predictions aligned with the scene rows
            prediction_ms: Time spent producing the predictions

        Returns:
            EstimateResult; status "no_foreground" with no poses when every
            point is predicted as background
        """
        if predictions.n_points != scene.n_points:
            raise ConfigurationError(
                f"Scene {scene.scene_id} has {scene.n_points} points but {predictions.n_points} predictions")
        cfg = self.cfg
        start = time.perf_counter()

        points = scene.points
        labels = predictions.argmax_labels()
        all_rows = np.arange(scene.n_points)
        classes = [int(c) for c in np.unique(labels) if c != BACKGROUND]
        if not classes:
            logger.warning(f"Scene {scene.scene_id}: no foreground points, returning an empty result")
            elapsed = (time.perf_counter() - start) * 1000.0
            timing = TimingBreakdown(prediction_ms, elapsed, prediction_ms + elapsed)
            return EstimateResult(scene.scene_id, timing=timing, status="no_foreground")

        hypotheses: List[InstanceHypothesis] = []
        for class_id in classes:
            pool = np.flatnonzero(labels == class_id) if cfg.filter_background else all_rows
            found = cluster_instances(points, predictions, cfg.center_bandwidth, class_id=class_id, pool=pool,
                                      min_cluster_size=cfg.min_cluster_size, eps=cfg.mean_shift_eps,
                                      max_iter=cfg.mean_shift_max_iter, kernel=cfg.kernel)
            for hyp in found:
                edge_pool = hyp.point_indices if cfg.filter_background else all_rows
                hypotheses.append(vote_edge_points(hyp, points, predictions, cfg.edge_bandwidth, pool=edge_pool,
                                                   eps=cfg.mean_shift_eps, max_iter=cfg.mean_shift_max_iter,
                                                   kernel=cfg.kernel))

        hypotheses = match_hypotheses(hypotheses, scene.instance_label)
        poses = []
        for hyp in hypotheses:
            model = self.models.get(hyp.class_id)
            if model is None:
                logger.warning(f"Scene {scene.scene_id}: no model for class {hyp.class_id}, skipping hypothesis")
                continue
            try:
                pose = estimate_pose(hyp, model, use_vote_weights=cfg.use_vote_weights)
            except DegenerateCorrespondenceError as e:
                logger.warning(f"Scene {scene.scene_id}: pose fit failed for class {hyp.class_id}: {e}")
                continue
            poses.append(PoseEstimate(scene.scene_id, hyp.instance_id, hyp.class_id, pose, hyp))

        pose_ms = (time.perf_counter() - start) * 1000.0
        timing = TimingBreakdown(prediction_ms, pose_ms, prediction_ms + pose_ms)
        logger.debug(f"Scene {scene.scene_id}: {len(poses)} poses in {pose_ms:.1f} ms")
        return EstimateResult(scene.scene_id, poses, hypotheses, timing)

    def estimate_timed(self, scene: SceneSample, predictions: PredictionField, repeat: Optional[int] = None,
                       prediction_ms: float = 0.0) -> EstimateResult:
        """Run estimate `repeat` times and report the median stage times"""
        repeat = self.cfg.repeat if repeat is None else repeat
        runs = [self.estimate(scene, predictions, prediction_ms) for _ in range(max(repeat, 1))]
        median_pose = float(np.median([r.timing.pose_estimation_ms for r in runs]))
        result = runs[0]
        result.timing = TimingBreakdown(prediction_ms, median_pose, prediction_ms + median_pose)
        return result

    def estimate_batch(self, scenes: Sequence[SceneSample], predictor: Predictor,
                       workers: Optional[int] = None) -> List[EstimateResult]:
        """
        Predict and estimate every scene, scenes in parallel.

        Results come back in input order and do not depend on the worker count.
        """
        workers = self.cfg.workers if workers is None else workers

        def run_one(scene: SceneSample) -> EstimateResult:
            start = time.perf_counter()
            predictions = predictor(scene)
            prediction_ms = (time.perf_counter() - start) * 1000.0
            return self.estimate(scene, predictions, prediction_ms)

        results: Dict[int, EstimateResult] = {}
        with concurrent.futures.ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
            future_to_index = {executor.submit(run_one, scene): i for i, scene in enumerate(scenes)}
            for future in concurrent.futures.as_completed(future_to_index):
                index = future_to_index[future]
                try:
                    results[index] = future.result()
                except Exception as e:
                    logger.error(f"Error estimating scene {scenes[index].scene_id}: {e}")
                    raise
        logger.info(f"Estimated {sum(len(r.poses) for r in results.values())} poses over {len(scenes)} scenes")
        return [results[i] for i in range(len(scenes))]

    # ─── Evaluation ────────────────────────────────────────────

    def evaluate(self, poses: Sequence, scenes: Sequence[SceneSample],
                 predictions: Optional[Sequence[PredictionField]] = None,
                 votes: Optional[Mapping[Tuple[int, int], np.ndarray]] = None,
                 timings: Optional[Sequence[TimingBreakdown]] = None) -> EvalReport:
        """
        Score estimated poses against the ground truth of their scenes.

        Estimates are matched to ground-truth instances by (scene_id,
        instance_id). A ground-truth instance without an estimate counts as
        a failure at distance auc_max_threshold for every pose metric.

        Args:
            poses: Items with scene_id, instance_id, class_id and pose
                (PoseEstimate or rows read back from a pose table)
            scenes: Frames with ground truth
            predictions: Optional per-scene predictions for mIoU
            votes: Optional voted edge points keyed by (scene_id, instance_id);
                taken from the estimate hypotheses when not given
            timings: Optional per-frame timings, reported as medians

        Returns:
            EvalReport with one row per class and a final ALL row
        """
        cfg = self.cfg
        threshold = cfg.auc_max_threshold
        by_key = {}
        for estimate in poses:
            if estimate.instance_id < 0:
                continue
            by_key[(int(estimate.scene_id), int(estimate.instance_id))] = estimate

        per_class: Dict[int, Dict[str, list]] = {}
        missing = 0
        for scene in scenes:
            for record in scene.instances:
                bucket = per_class.setdefault(record.class_id, {"add": [], "add_s": [], "add_sym": [], "kp": []})
                estimate = by_key.get((scene.scene_id, record.instance_id))
                if estimate is None or estimate.class_id != record.class_id:
                    missing += 1
                    for name in ("add", "add_s", "add_sym"):
                        bucket[name].append(threshold)
                    continue
                model = record.model
                bucket["add"].append(PoseMetrics.add(estimate.pose, record.gt_pose, model))
                bucket["add_s"].append(PoseMetrics.add_s(estimate.pose, record.gt_pose, model))
                bucket["add_sym"].append(PoseMetrics.add_of(estimate.pose, record.gt_pose, model))

                voted = None
                if votes is not None:
                    voted = votes.get((scene.scene_id, record.instance_id))
                else:
                    hyp = getattr(estimate, "hypothesis", None)
                    if hyp is not None and hyp.has_edge_points:
                        voted = hyp.voted_edge_points
                if voted is not None:
                    bucket["kp"].append(PoseMetrics.keypoint_error(voted, scene.gt_edge_points(record.instance_id)))
        if missing:
            logger.warning(f"{missing} ground-truth instances have no estimate, scored at {threshold} m")

        rows = []
        distances = {}
        for class_id in sorted(per_class):
            bucket = per_class[class_id]
            diameter = self._diameter(class_id, scenes)
            rows.append(ClassRow(
                class_id=str(class_id),
                adds_auc=PoseMetrics.auc(bucket["add_s"], threshold),
                add_sym_auc=PoseMetrics.auc(bucket["add_sym"], threshold),
                add01d_rate=PoseMetrics.add01d_rate(bucket["add_sym"], diameter),
                kp_err_m=float(np.mean(bucket["kp"])) if bucket["kp"] else float("nan"),
                n_instances=len(bucket["add"]),
            ))
            for name in ("add", "add_s", "add_sym"):
                distances[f"{class_id}/{name}"] = np.asarray(bucket[name])
        if rows:
            kp_values = [r.kp_err_m for r in rows if not np.isnan(r.kp_err_m)]
            rows.append(ClassRow(
                class_id="ALL",
                adds_auc=float(np.mean([r.adds_auc for r in rows])),
                add_sym_auc=float(np.mean([r.add_sym_auc for r in rows])),
                add01d_rate=float(np.mean([r.add01d_rate for r in rows])),
                kp_err_m=float(np.mean(kp_values)) if kp_values else float("nan"),
                n_instances=sum(r.n_instances for r in rows),
            ))

        miou = float("nan")
        if predictions is not None:
            if len(predictions) != len(scenes):
                raise ConfigurationError("evaluate needs one prediction field per scene")
            predicted = np.concatenate([p.argmax_labels() for p in predictions])
            truth = np.concatenate([s.class_label for s in scenes])
            miou = PoseMetrics.miou(predicted, truth)

        timing = TimingBreakdown()
        if timings:
            timing = TimingBreakdown(
                float(np.median([t.prediction_ms for t in timings])),
                float(np.median([t.pose_estimation_ms for t in timings])),
                float(np.median([t.total_ms for t in timings])),
            )
        return EvalReport(rows, miou, timing, distances)

    def _diameter(self, class_id: int, scenes: Sequence[SceneSample]) -> float:
        if class_id in self.models:
            return self.models[class_id].diameter
        for scene in scenes:
            for record in scene.instances:
                if record.class_id == class_id:
                    return record.model.diameter
        raise ConfigurationError(f"No model known for class {class_id}")


def match_hypotheses(hypotheses: Sequence[InstanceHypothesis],
                     instance_label: np.ndarray) -> List[InstanceHypothesis]:
    """
    Give each hypothesis the ground-truth instance id most of its points
    carry. When several hypotheses claim one instance the largest keeps it
    (earliest on ties) and the others get -1.
    """
    claimed = {}
    proposals = []
    for idx, hyp in enumerate(hypotheses):
        member_labels = instance_label[hyp.point_indices]
        member_labels = member_labels[member_labels != BACKGROUND]
        proposals.append(int(np.argmax(np.bincount(member_labels))) if member_labels.size else -1)
    order = sorted(range(len(hypotheses)), key=lambda i: (-hypotheses[i].n_points, i))
    matched = list(hypotheses)
    for idx in order:
        instance_id = proposals[idx]
        if instance_id >= 0 and instance_id not in claimed:
            claimed[instance_id] = idx
        else:
            instance_id = -1
        matched[idx] = replace(hypotheses[idx], instance_id=instance_id)
    return matched


def run_estimate(scene: SceneSample, predictions: PredictionField, models: Mapping[int, ObjectModel],
                 cfg: PipelineConfig = PipelineConfig(),
                 prediction_ms: float = 0.0) -> Tuple[List[PoseEstimate], TimingBreakdown]:
    """Per-instance poses of one frame and its timing breakdown"""
    result = PosePipeline(models, cfg).estimate(scene, predictions, prediction_ms)
    return result.poses, result.timing


def run_eval(poses: Sequence, scenes: Sequence[SceneSample], models: Mapping[int, ObjectModel],
             cfg: PipelineConfig = PipelineConfig(), **kwargs) -> EvalReport:
    """Evaluation tables for a set of estimated poses (see PosePipeline.evaluate)"""
    return PosePipeline(models, cfg).evaluate(poses, scenes, **kwargs)
