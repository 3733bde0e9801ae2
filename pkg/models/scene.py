from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models.errors import ValidationError
from models.geometry import CameraIntrinsics, PointCloud, RigidTransform

# Label sentinel for background points (class and instance labels)
BACKGROUND = -1

DIAMETER_TOLERANCE = 1e-9


def _readonly(array, dtype=np.float64) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ObjectModel:
    """
    Object mesh reduced to its vertex set, in object coordinates (meters).

    edge_points are the M distinctive model points that scene points vote for
    and that the pose fit matches against.
    """
    class_id: int
    vertices: np.ndarray
    diameter: float
    symmetric: bool = False
    edge_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    name: str = ""
    shape: str = "mesh"
    # Analytic dimensions for generated shapes, empty for plain meshes
    dims: Tuple[float, ...] = ()

    def __post_init__(self):
        vertices = _readonly(self.vertices).reshape(-1, 3)
        edge_points = _readonly(self.edge_points).reshape(-1, 3)
        if vertices.shape[0] < 4:
            raise ValidationError(f"ObjectModel needs at least 4 vertices, got {vertices.shape[0]}")
        if not (np.all(np.isfinite(vertices)) and np.all(np.isfinite(edge_points))):
            raise ValidationError("ObjectModel contains non-finite coordinates")
        if self.diameter <= 0:
            raise ValidationError(f"ObjectModel diameter must be positive, got {self.diameter}")

        # Imported lazily: utils.geometry depends on models.geometry only
        from utils.geometry import max_pairwise_distance
        actual = max_pairwise_distance(vertices)
        if abs(actual - self.diameter) > DIAMETER_TOLERANCE:
            raise ValidationError(
                f"ObjectModel diameter {self.diameter} differs from max vertex distance {actual}")

        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edge_points", edge_points)
        object.__setattr__(self, "diameter", float(self.diameter))
        object.__setattr__(self, "symmetric", bool(self.symmetric))

    @classmethod
    def from_vertices(cls, class_id: int, vertices: np.ndarray, symmetric: bool = False,
                      edge_points: Optional[np.ndarray] = None, name: str = "",
                      shape: str = "mesh", dims: Tuple[float, ...] = ()) -> "ObjectModel":
        """Build a model, computing the diameter from the vertices"""
        from utils.geometry import max_pairwise_distance
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        return cls(
            class_id=class_id,
            vertices=vertices,
            diameter=max_pairwise_distance(vertices),
            symmetric=symmetric,
            edge_points=np.zeros((0, 3)) if edge_points is None else edge_points,
            name=name,
            shape=shape,
            dims=tuple(float(d) for d in dims),
        )

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_edge_points(self) -> int:
        return self.edge_points.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class InstanceRecord:
    """One posed object in a scene"""
    class_id: int
    instance_id: int
    gt_pose: RigidTransform
    model: ObjectModel
    model_ref: str = ""


@dataclass(frozen=True)
class SceneSample:
    """
    A synthetic RGBD-like frame with exact ground truth.

    Per point i of instance k the offsets satisfy
    p_i + gt_edge_offsets[i, j] == gt_pose_k(model.edge_points[j]) and
    p_i + gt_center_offset[i] == gt_pose_k(model.centroid).
    Background points carry zero offsets.
    """
    scene_id: int
    cloud: PointCloud
    class_label: np.ndarray
    instance_label: np.ndarray
    instances: List[InstanceRecord]
    gt_edge_offsets: np.ndarray
    gt_center_offset: np.ndarray
    synthetic_color: np.ndarray
    num_classes: int
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    depth: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.cloud)
        class_label = _readonly(self.class_label, np.int64).reshape(-1)
        instance_label = _readonly(self.instance_label, np.int64).reshape(-1)
        edge_offsets = _readonly(self.gt_edge_offsets)
        center_offset = _readonly(self.gt_center_offset).reshape(-1, 3)
        color = _readonly(self.synthetic_color).reshape(-1, 3)

        if class_label.shape[0] != n or instance_label.shape[0] != n:
            raise ValidationError("SceneSample label arrays do not match the point count")
        if edge_offsets.ndim != 3 or edge_offsets.shape[0] != n or edge_offsets.shape[2] != 3:
            raise ValidationError(f"SceneSample edge offsets must be N x M x 3, got {edge_offsets.shape}")
        if center_offset.shape[0] != n or color.shape[0] != n:
            raise ValidationError("SceneSample center offsets / colors do not match the point count")
        if np.any((color < 0) | (color > 1)):
            raise ValidationError("SceneSample synthetic colors must lie in [0, 1]")
        if np.any(class_label >= self.num_classes) or np.any(class_label < BACKGROUND):
            raise ValidationError("SceneSample class label outside [background, num_classes)")

        object.__setattr__(self, "class_label", class_label)
        object.__setattr__(self, "instance_label", instance_label)
        object.__setattr__(self, "gt_edge_offsets", edge_offsets)
        object.__setattr__(self, "gt_center_offset", center_offset)
        object.__setattr__(self, "synthetic_color", color)
        object.__setattr__(self, "instances", list(self.instances))
        if self.depth is not None:
            object.__setattr__(self, "depth", _readonly(self.depth))

    @property
    def n_points(self) -> int:
        return len(self.cloud)

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def foreground_mask(self) -> np.ndarray:
        return self.class_label != BACKGROUND

    @property
    def m_edge_points(self) -> int:
        return self.gt_edge_offsets.shape[1]

    def instance(self, instance_id: int) -> InstanceRecord:
        for record in self.instances:
            if record.instance_id == instance_id:
                return record
        raise KeyError(f"Scene {self.scene_id} has no instance {instance_id}")

    def gt_edge_points(self, instance_id: int) -> np.ndarray:
        """Ground-truth edge points of an instance in camera coordinates"""
        record = self.instance(instance_id)
        pose = record.gt_pose
        return record.model.edge_points @ pose.R.T + pose.t

    def instance_points(self, instance_id: int) -> np.ndarray:
        return np.flatnonzero(self.instance_label == instance_id)
