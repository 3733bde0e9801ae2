"""
Reduced oracle-equivalence suites, runnable from the command line.

Each check returns a CheckResult; none of them raises on a failed property.
"""
import logging
from typing import Callable, List, NamedTuple

import numpy as np

from generators.synth_scene import default_model_set, oracle_predictions, scene_batch
from models.config import NoiseConfig, PipelineConfig
from models.predictions import FeatureMap
from models.scene import ObjectModel
from utils.geometry import (fit_rigid, random_pose, rotation_error, transform_points,
                            translation_error)
from utils.keypoints import select_dynamic_keypoints
from utils.metrics import PoseMetrics
from utils.pipeline import PosePipeline
from utils.voting import mean_shift

# Setup logging
logger = logging.getLogger(__name__)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def check_pose_fit(rng: np.random.Generator, trials: int = 200) -> CheckResult:
    worst_r, worst_t = 0.0, 0.0
    for _ in range(trials):
        pose = random_pose(rng, translation_scale=1.0)
        src = rng.uniform(-0.1, 0.1, size=(8, 3))
        fitted = fit_rigid(src, transform_points(pose, src))
        worst_r = max(worst_r, rotation_error(fitted.R, pose.R))
        worst_t = max(worst_t, translation_error(fitted.t, pose.t))
    passed = worst_r < 1e-8 and worst_t < 1e-9
    return CheckResult("pose_fit", passed, f"max rotation error {worst_r:.2e} rad, translation {worst_t:.2e} m")


def _oracle_scenes(seed: int, n_scenes: int = 3):
    cfg = PipelineConfig(n_points=6000, seed=seed)
    models = default_model_set(seed=seed)
    scenes = scene_batch(models, n_scenes, cfg.intrinsics, NoiseConfig(seed=seed), cfg.n_points,
                         cfg.objects_per_scene, cfg.plane_depth, workers=1)
    return cfg, models, scenes


def check_zero_noise_identity(seed: int) -> CheckResult:
    cfg, models, scenes = _oracle_scenes(seed)
    pipeline = PosePipeline({m.class_id: m for m in models}, cfg)
    worst, missing = 0.0, 0
    for scene in scenes:
        result = pipeline.estimate(scene, oracle_predictions(scene, NoiseConfig(seed=seed)))
        found = {e.instance_id: e for e in result.poses}
        for record in scene.instances:
            if record.instance_id not in found:
                missing += 1
                continue
            worst = max(worst, PoseMetrics.add(found[record.instance_id].pose, record.gt_pose, record.model))
    return CheckResult("zero_noise_identity", missing == 0 and worst < 1e-6,
                       f"max ADD {worst:.2e} m, {missing} instances missed")


def check_filter_equivalence(seed: int) -> CheckResult:
    cfg, models, scenes = _oracle_scenes(seed)
    model_map = {m.class_id: m for m in models}
    filtered = PosePipeline(model_map, cfg)
    unfiltered = PosePipeline(model_map, PipelineConfig(n_points=cfg.n_points, seed=seed, filter_background=False))
    noise = NoiseConfig(offset_sigma=0.005, label_flip_rate=0.05, seed=seed)
    differing = 0
    for scene in scenes:
        predictions = oracle_predictions(scene, noise)
        a = [e.pose.as_row() for e in filtered.estimate(scene, predictions).poses]
        b = [e.pose.as_row() for e in unfiltered.estimate(scene, predictions).poses]
        if len(a) != len(b) or not all(np.array_equal(x, y) for x, y in zip(a, b)):
            differing += 1
    return CheckResult("filter_equivalence", differing == 0, f"{differing} of {len(scenes)} scenes differ")


def check_add_s_oracle(rng: np.random.Generator, trials: int = 100) -> CheckResult:
    worst, ordered = 0.0, True
    for _ in range(trials):
        model = ObjectModel.from_vertices(0, rng.uniform(-0.1, 0.1, size=(60, 3)))
        pred, gt = random_pose(rng, 0.05), random_pose(rng, 0.05)
        fast = PoseMetrics.add_s(pred, gt, model)
        worst = max(worst, abs(fast - PoseMetrics.add_s_bruteforce(pred, gt, model)))
        ordered &= fast <= PoseMetrics.add(pred, gt, model) + 1e-12
    return CheckResult("add_s_oracle", worst < 1e-9 and ordered,
                       f"max |KD-tree - brute force| {worst:.2e}, ADD-S <= ADD: {ordered}")


def _step_integral(distances: np.ndarray, max_threshold: float) -> float:
    """Exact area under accuracy(theta) = share(d < theta), summed piece by piece"""
    breaks = np.unique(np.concatenate([[0.0, max_threshold], distances[distances < max_threshold]]))
    area = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        area += (hi - lo) * np.mean(distances <= lo)
    return 100.0 * area / max_threshold


def check_auc_oracle(rng: np.random.Generator, trials: int = 50) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        d = rng.uniform(0.0, 0.15, size=rng.integers(1, 40))
        worst = max(worst, abs(PoseMetrics.auc(d, 0.1) - _step_integral(d, 0.1)))
    return CheckResult("auc_oracle", worst < 1e-6, f"max AUC deviation {worst:.2e}")


def check_dks_properties(rng: np.random.Generator, trials: int = 100) -> CheckResult:
    failures = 0
    for _ in range(trials):
        n, c = int(rng.integers(5, 60)), int(rng.integers(1, 40))
        k = int(rng.integers(1, n + 1))
        values = rng.integers(0, 5, size=(n, c)).astype(np.float64)
        index = np.sort(rng.choice(10 * n, size=n, replace=False))
        base = select_dynamic_keypoints(FeatureMap(values, index), k)
        permuted = select_dynamic_keypoints(FeatureMap(values[:, rng.permutation(c)], index), k)
        again = select_dynamic_keypoints(FeatureMap(values, index), k)
        ok = (set(base.indices) == set(permuted.indices)
              and np.array_equal(base.indices, again.indices)
              and len(base) == k
              and set(base.indices) <= set(index))
        failures += not ok
    return CheckResult("dks_properties", failures == 0, f"{failures} of {trials} feature maps failed")


def check_mean_shift_blobs(rng: np.random.Generator) -> CheckResult:
    blob_a = rng.normal([0.0, 0.0, 0.5], 0.003, size=(100, 3))
    blob_b = rng.normal([0.2, 0.0, 0.5], 0.003, size=(100, 3))
    result = mean_shift(np.vstack([blob_a, blob_b]), bandwidth=0.03)
    if result.centers.shape[0] != 2:
        return CheckResult("mean_shift_blobs", False, f"{result.centers.shape[0]} centers found")
    means = np.array([blob_a.mean(axis=0), blob_b.mean(axis=0)])
    error = max(np.min(np.linalg.norm(result.centers - mu, axis=1)) for mu in means)
    return CheckResult("mean_shift_blobs", error < 0.01, f"max center error {error:.4f} m")


def run_selfcheck(seed: int = 0) -> List[CheckResult]:
    """Run every check; log each outcome"""
    rng = np.random.default_rng(seed)
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_pose_fit(rng),
        lambda: check_zero_noise_identity(seed),
        lambda: check_filter_equivalence(seed),
        lambda: check_add_s_oracle(rng),
        lambda: check_auc_oracle(rng),
        lambda: check_dks_properties(rng),
        lambda: check_mean_shift_blobs(rng),
    ]
    results = []
    for check in checks:
        result = check()
        if result.passed:
            logger.info(f"[pass] {result.name}: {result.detail}")
        else:
            logger.error(f"[FAIL] {result.name}: {result.detail}")
        results.append(result)
    return results
