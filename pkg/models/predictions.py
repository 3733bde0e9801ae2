from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.errors import ValidationError
from models.scene import BACKGROUND

PROBABILITY_TOLERANCE = 1e-6


def _readonly(array, dtype=np.float64) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class PredictionField:
    """
    Point-wise network output.

    class_confidence: N x (C + 1) probabilities, last column is background
    edge_offsets: N x M x 3 offsets to the edge points (meters)
    center_offset: N x 3 offsets to the instance center (meters)
    """
    class_confidence: np.ndarray
    edge_offsets: np.ndarray
    center_offset: np.ndarray

    def __post_init__(self):
        conf = _readonly(self.class_confidence)
        edge = _readonly(self.edge_offsets)
        center = _readonly(self.center_offset)
        n = conf.shape[0]

        if conf.ndim != 2 or conf.shape[1] < 2:
            raise ValidationError(f"class_confidence must be N x (C+1) with C >= 1, got {conf.shape}")
        if edge.ndim != 3 or edge.shape[0] != n or edge.shape[2] != 3:
            raise ValidationError(f"edge_offsets must be N x M x 3, got {edge.shape}")
        if center.shape != (n, 3):
            raise ValidationError(f"center_offset must be N x 3, got {center.shape}")
        if not (np.all(np.isfinite(edge)) and np.all(np.isfinite(center))):
            raise ValidationError("PredictionField offsets must be finite")
        validate_probability_rows(conf)

        object.__setattr__(self, "class_confidence", conf)
        object.__setattr__(self, "edge_offsets", edge)
        object.__setattr__(self, "center_offset", center)

    @property
    def n_points(self) -> int:
        return self.class_confidence.shape[0]

    @property
    def num_classes(self) -> int:
        """Number of object classes (background column excluded)"""
        return self.class_confidence.shape[1] - 1

    @property
    def m_edge_points(self) -> int:
        return self.edge_offsets.shape[1]

    def argmax_labels(self) -> np.ndarray:
        """Predicted class id per point, BACKGROUND for background argmax"""
        labels = np.argmax(self.class_confidence, axis=1)
        return np.where(labels == self.num_classes, BACKGROUND, labels)

    def subset(self, indices: np.ndarray) -> "PredictionField":
        return PredictionField(
            self.class_confidence[indices],
            self.edge_offsets[indices],
            self.center_offset[indices],
        )


def validate_probability_rows(conf: np.ndarray) -> None:
    """Raise ValidationError unless every row is a probability vector"""
    if not np.all(np.isfinite(conf)):
        raise ValidationError("Confidences must be finite")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValidationError("Confidences must lie in [0, 1]")
    if conf.shape[0] and np.max(np.abs(conf.sum(axis=1) - 1.0)) > PROBABILITY_TOLERANCE:
        raise ValidationError("Confidence rows must sum to 1")


@dataclass(frozen=True)
class InstanceHypothesis:
    """
    One detected object instance.

    point_indices index the scene cloud. voted_edge_points and vote_support
    stay None until edge voting has run.
    """
    class_id: int
    point_indices: np.ndarray
    voted_center: np.ndarray
    voted_edge_points: Optional[np.ndarray] = None
    vote_support: Optional[np.ndarray] = None
    instance_id: int = -1

    def __post_init__(self):
        indices = _readonly(self.point_indices, np.int64).reshape(-1)
        if indices.shape[0] == 0:
            raise ValidationError("InstanceHypothesis needs at least one point")
        object.__setattr__(self, "point_indices", indices)
        object.__setattr__(self, "voted_center", _readonly(self.voted_center).reshape(3))
        if self.voted_edge_points is not None:
            edge = _readonly(self.voted_edge_points).reshape(-1, 3)
            if not np.all(np.isfinite(edge)):
                raise ValidationError("Voted edge points must be finite")
            object.__setattr__(self, "voted_edge_points", edge)
        if self.vote_support is not None:
            object.__setattr__(self, "vote_support", _readonly(self.vote_support, np.int64).reshape(-1))

    @property
    def n_points(self) -> int:
        return self.point_indices.shape[0]

    @property
    def has_edge_points(self) -> bool:
        return self.voted_edge_points is not None


@dataclass(frozen=True)
class FeatureMap:
    """Point-wise features (N x C) and the cloud row each feature row belongs to"""
    values: np.ndarray
    point_index: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 2:
            raise ValidationError(f"FeatureMap values must be N x C, got {values.shape}")
        index = _readonly(self.point_index, np.int64).reshape(-1)
        if index.shape[0] != values.shape[0]:
            raise ValidationError("FeatureMap point_index length differs from the row count")
        if not np.all(np.isfinite(values)):
            raise ValidationError("FeatureMap values must be finite")
        if np.unique(index).shape[0] != index.shape[0]:
            raise ValidationError("FeatureMap point_index entries must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "point_index", index)

    @classmethod
    def dense(cls, values: np.ndarray) -> "FeatureMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.arange(values.shape[0]))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def subset(self, rows: np.ndarray) -> "FeatureMap":
        return FeatureMap(self.values[rows], self.point_index[rows])


@dataclass(frozen=True)
class KeypointSet:
    """Selected keypoints (cloud indices) with the number of channels each won"""
    indices: np.ndarray
    win_counts: np.ndarray

    def __post_init__(self):
        indices = _readonly(self.indices, np.int64).reshape(-1)
        wins = _readonly(self.win_counts, np.int64).reshape(-1)
        if indices.shape != wins.shape:
            raise ValidationError("KeypointSet indices and win_counts differ in length")
        if np.unique(indices).shape[0] != indices.shape[0]:
            raise ValidationError("KeypointSet indices must be distinct")
        if np.any(wins < 0) or np.any(np.diff(wins) > 0):
            raise ValidationError("KeypointSet win_counts must be nonnegative and nonincreasing")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "win_counts", wins)

    def __len__(self) -> int:
        return self.indices.shape[0]
