from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from models.errors import ConfigurationError, EmptyInputError, ValidationError
from models.geometry import RigidTransform
from models.scene import ObjectModel
from utils.geometry import transform_points


class PoseMetrics:
    """
    Pose and segmentation metrics: ADD, ADD-S, ADD(S), AUC, ADD(S)-0.1d,
    mIoU and keypoint error. Distances are in meters, rates in percent.
    """

    # Default values for the evaluation protocol
    DEFAULT_AUC_MAX_THRESHOLD = 0.10   # 10 cm
    DIAMETER_FRACTION = 0.1            # ADD(S)-0.1d

    @staticmethod
    def add(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
        """Mean distance between corresponding model vertices under both poses"""
        est = transform_points(pred, model.vertices)
        ref = transform_points(gt, model.vertices)
        return float(np.linalg.norm(est - ref, axis=1).mean())

    @staticmethod
    def add_s(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
        """Mean closest-point distance from predicted to ground-truth vertices (KD-tree)"""
        est = transform_points(pred, model.vertices)
        ref = transform_points(gt, model.vertices)
        distances, _ = cKDTree(ref).query(est, k=1)
        return float(distances.mean())

    @staticmethod
    def add_s_bruteforce(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
        """O(q^2) reference for add_s"""
        est = transform_points(pred, model.vertices)
        ref = transform_points(gt, model.vertices)
        closest = np.empty(est.shape[0])
        for i, point in enumerate(est):
            closest[i] = np.min(np.linalg.norm(ref - point, axis=1))
        return float(closest.mean())

    @classmethod
    def add_of(cls, pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
        """ADD(S): ADD-S for symmetric models, ADD otherwise"""
        if model.symmetric:
            return cls.add_s(pred, gt, model)
        return cls.add(pred, gt, model)

    @classmethod
    def auc(cls, distances: Sequence[float], max_threshold: Optional[float] = None) -> float:
        """
        Area under the accuracy-vs-threshold curve, in percent.

        accuracy(theta) is the share of distances strictly below theta. The
        integral of this step function over [0, T] is exact: each distance d
        contributes max(0, T - d).

        Args:
            distances: Pose errors (meters)
            max_threshold: Upper end T of the threshold sweep (default 0.1 m)

        Returns:
            100 / T * integral_0^T accuracy(theta) d theta
        """
        if max_threshold is None:
            max_threshold = cls.DEFAULT_AUC_MAX_THRESHOLD
        if max_threshold <= 0:
            raise ConfigurationError(f"AUC max threshold must be positive, got {max_threshold}")
        d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
        if d.shape[0] == 0:
            raise EmptyInputError("AUC needs at least one distance")
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise ValidationError("Distances must be nonnegative numbers")
        area = np.clip(max_threshold - d, 0.0, None).sum() / d.shape[0]
        return float(min(100.0, max(0.0, 100.0 * area / max_threshold)))

    @classmethod
    def accuracy_curve(cls, distances: Sequence[float], max_threshold: Optional[float] = None,
                       samples: int = 101) -> Dict[str, np.ndarray]:
        """Accuracy (%) at evenly spaced thresholds, for plotting"""
        if max_threshold is None:
            max_threshold = cls.DEFAULT_AUC_MAX_THRESHOLD
        d = np.asarray(distances, dtype=np.float64).reshape(-1)
        if d.shape[0] == 0:
            raise EmptyInputError("Accuracy curve needs at least one distance")
        thresholds = np.linspace(0.0, max_threshold, samples)
        accuracy = 100.0 * (d[None, :] < thresholds[:, None]).mean(axis=1)
        return {"threshold": thresholds, "accuracy": accuracy}

    @classmethod
    def add01d_rate(cls, distances: Sequence[float], diameter: float) -> float:
        """Percentage of distances strictly below 10% of the object diameter"""
        if diameter <= 0:
            raise ConfigurationError(f"Diameter must be positive, got {diameter}")
        d = np.asarray(distances, dtype=np.float64).reshape(-1)
        if d.shape[0] == 0:
            raise EmptyInputError("ADD(S)-0.1d needs at least one distance")
        return float(100.0 * np.mean(d < cls.DIAMETER_FRACTION * diameter))

    @staticmethod
    def miou(pred_labels: Sequence[int], gt_labels: Sequence[int], classes: Optional[Iterable[int]] = None) -> float:
        """
        Mean intersection over union of point label sets, in percent.

        Classes absent from both sides are skipped; background is an ordinary
        class when it appears.
        """
        pred_labels = np.asarray(pred_labels).reshape(-1)
        gt_labels = np.asarray(gt_labels).reshape(-1)
        if pred_labels.shape != gt_labels.shape:
            raise ValidationError(f"Label sequences differ in length ({pred_labels.shape[0]} vs {gt_labels.shape[0]})")
        if classes is None:
            classes = np.union1d(pred_labels, gt_labels)

        ious = []
        for class_id in classes:
            in_pred = pred_labels == class_id
            in_gt = gt_labels == class_id
            union = np.count_nonzero(in_pred | in_gt)
            if union == 0:
                continue
            ious.append(np.count_nonzero(in_pred & in_gt) / union)
        if not ious:
            return float("nan")
        return float(100.0 * np.mean(ious))

    @staticmethod
    def keypoint_error(voted: np.ndarray, gt_scene_edge_points: np.ndarray) -> float:
        """Mean Euclidean distance between voted and true edge points (meters)"""
        voted = np.asarray(voted, dtype=np.float64).reshape(-1, 3)
        truth = np.asarray(gt_scene_edge_points, dtype=np.float64).reshape(-1, 3)
        if voted.shape != truth.shape:
            raise ValidationError(f"Got {voted.shape[0]} voted and {truth.shape[0]} true edge points")
        if voted.shape[0] == 0:
            raise EmptyInputError("Keypoint error needs at least one edge point")
        return float(np.linalg.norm(voted - truth, axis=1).mean())
