import logging
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from models.errors import ConfigurationError, DegenerateCorrespondenceError, ValidationError
from models.geometry import CameraIntrinsics, PointCloud, RigidTransform

# Setup logging
logger = logging.getLogger(__name__)

# Relative singular-value threshold below which centered points count as rank deficient
RANK_TOLERANCE = 1e-10


def backproject(depth: np.ndarray, intr: CameraIntrinsics, mask: Optional[np.ndarray] = None) -> PointCloud:
    """
    Convert a metric depth image to a camera-frame point cloud.

    Args:
        depth: H x W depth in meters, 0 marks missing depth
        intr: Camera intrinsics, must match the image size
        mask: Optional H x W boolean selection

    Returns:
        PointCloud with one point per valid pixel (row-major order) and its (u, v)
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ConfigurationError(
            f"Depth image is {depth.shape[1]}x{depth.shape[0]}, intrinsics expect {intr.width}x{intr.height}")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ValidationError("Depth values must be finite and nonnegative")

    valid = depth > 0
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != depth.shape:
            raise ConfigurationError(f"Mask shape {mask.shape} differs from depth shape {depth.shape}")
        valid &= mask

    v, u = np.nonzero(valid)
    z = depth[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1), np.stack([u, v], axis=1))


def project_points(intr: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Project camera-frame points to (u, v) pixel coordinates"""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if np.any(pts[:, 2] <= 0):
        raise ValidationError("Cannot project points at or behind the camera plane")
    u = intr.fx * pts[:, 0] / pts[:, 2] + intr.cx
    v = intr.fy * pts[:, 1] / pts[:, 2] + intr.cy
    return np.stack([u, v], axis=1)


def fit_rigid(src: np.ndarray, dst: np.ndarray, weights: Optional[np.ndarray] = None) -> RigidTransform:
    """
    Weighted least-squares rigid fit (SVD method of Arun et al.).

    Minimizes sum_j w_j * ||dst_j - (R @ src_j + t)||^2 and corrects the
    reflection case so that det(R) = +1.

    Args:
        src: n x 3 points in the source frame (e.g. model edge points)
        dst: n x 3 corresponding points in the target frame
        weights: Optional n nonnegative weights, defaults to 1

    Returns:
        RigidTransform mapping src onto dst
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ConfigurationError(f"fit_rigid got {src.shape[0]} source and {dst.shape[0]} target points")
    if src.shape[0] < 3:
        raise DegenerateCorrespondenceError(f"fit_rigid needs at least 3 pairs, got {src.shape[0]}")

    if weights is None:
        w = np.ones(src.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != src.shape[0]:
            raise ConfigurationError("fit_rigid weights length differs from the point count")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("fit_rigid weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0 or np.count_nonzero(w) < 3:
        raise DegenerateCorrespondenceError("fit_rigid needs at least 3 pairs with positive weight")
    w = w / total

    centroid_src = w @ src
    centroid_dst = w @ dst
    src_c = src - centroid_src
    dst_c = dst - centroid_dst

    spread = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if spread[0] == 0 or spread[1] <= RANK_TOLERANCE * spread[0]:
        raise DegenerateCorrespondenceError("fit_rigid source points are collinear or coincident")

    H = (src_c * w[:, None]).T @ dst_c
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = -1.0 if np.linalg.det(V @ U.T) < 0 else 1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    t = centroid_dst - R @ centroid_src
    return RigidTransform(R, t)


def transform_points(pose: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Apply R @ x + t to every point"""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return pts @ pose.R.T + pose.t


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Pose that applies b first, then a"""
    return RigidTransform(a.R @ b.R, a.R @ b.t + a.t)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.R.T, -(a.R.T @ a.t))


def rotation_error(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    """Geodesic angle between two rotations in radians"""
    cos_angle = 0.5 * (np.trace(R_est @ R_gt.T) - 1.0)
    cos_angle = min(1.0, max(-1.0, cos_angle))
    # arccos is ill-conditioned near 0; use the skew part for small angles
    skew = R_est @ R_gt.T
    sin_angle = 0.5 * np.linalg.norm([skew[2, 1] - skew[1, 2], skew[0, 2] - skew[2, 0], skew[1, 0] - skew[0, 1]])
    return float(np.arctan2(sin_angle, cos_angle))


def translation_error(t_est: np.ndarray, t_gt: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(t_est) - np.asarray(t_gt)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly from SO(3)"""
    quaternion = rng.standard_normal(4)
    return Rotation.from_quat(quaternion / np.linalg.norm(quaternion)).as_matrix()


def random_pose(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, size=3))


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def max_pairwise_distance(vertices: np.ndarray) -> float:
    """
    Largest distance between any two vertices.

    The farthest pair always lies on the convex hull, so only hull vertices
    are compared; flat or tiny sets fall back to comparing every pair.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if vertices.shape[0] < 2:
        return 0.0
    candidates = vertices
    if vertices.shape[0] > 8:
        try:
            candidates = vertices[ConvexHull(vertices).vertices]
        except (QhullError, ValueError):
            logger.debug("Convex hull unavailable, comparing all vertex pairs")
    return float(pdist(candidates).max())
