from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from models.errors import ConfigurationError, ValidationError

ORTHONORMAL_TOLERANCE = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class RigidTransform:
    """
    A pose in SE(3): x_camera = R @ x_object + t.
    Rotation is dimensionless, translation is in meters.
    """
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        """Freeze the arrays and check that R is a proper rotation"""
        R = _frozen(self.R)
        t = _frozen(self.t).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValidationError(f"RigidTransform expects R 3x3 and t 3-vector, got {R.shape} and {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValidationError("RigidTransform contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise ValidationError("RigidTransform rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValidationError("RigidTransform rotation has det != +1")
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_row(cls, values: Sequence[float]) -> "RigidTransform":
        """Build from 12 values: R row-major then t"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValidationError(f"Pose row needs 12 values, got {values.shape[0]}")
        return cls(values[:9].reshape(3, 3), values[9:])

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.R.reshape(-1), self.t])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.R
        matrix[:3, 3] = self.t
        return matrix


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera intrinsics in pixels"""
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"Focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(f"Image size must be positive ({self.width}x{self.height})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(
                f"Principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}")

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PointCloud:
    """
    Seed points in camera coordinates (meters), optionally with the (u, v)
    pixel each point was backprojected from.
    """
    points: np.ndarray
    source_pixel: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        points = _frozen(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(points)):
            raise ValidationError("PointCloud contains non-finite coordinates")
        object.__setattr__(self, "points", points)

        if self.source_pixel is not None:
            pixels = np.array(self.source_pixel, dtype=np.int64, copy=True).reshape(-1, 2)
            if pixels.shape[0] != points.shape[0]:
                raise ValidationError(
                    f"source_pixel has {pixels.shape[0]} entries for {points.shape[0]} points")
            pixels.flags.writeable = False
            object.__setattr__(self, "source_pixel", pixels)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, indices: np.ndarray) -> "PointCloud":
        pixels = None if self.source_pixel is None else self.source_pixel[indices]
        return PointCloud(self.points[indices], pixels)
