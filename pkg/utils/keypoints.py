import logging
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from models.errors import ConfigurationError, EmptyInputError
from models.predictions import FeatureMap, KeypointSet
from models.scene import ObjectModel

# Setup logging
logger = logging.getLogger(__name__)

SALIENCY_NEIGHBORS = 10
# Saliency is compared in steps of 1% of its maximum
SALIENCY_LEVELS = 100


def select_dynamic_keypoints(fm: FeatureMap, k: int) -> KeypointSet:
    """
    Dynamic keypoint selection.

    Every feature channel votes for the row holding its maximum (lowest row
    on ties). Rows are ranked by (wins desc, row-value sum desc, row asc) and
    the first k are returned. Rows that win nothing only pad the result when
    fewer than k rows win a channel.

    Args:
        fm: Feature map restricted to foreground points
        k: Number of keypoints

    Returns:
        KeypointSet with cloud indices (fm.point_index) and win counts
    """
    if k <= 0:
        raise ConfigurationError(f"Keypoint count must be positive, got {k}")
    if fm.n_rows == 0 or fm.n_channels == 0:
        raise EmptyInputError("Dynamic keypoint selection needs a nonempty feature map")

    winners = np.argmax(fm.values, axis=0)
    wins = np.bincount(winners, minlength=fm.n_rows)
    winning_rows = np.flatnonzero(wins)

    if winning_rows.shape[0] >= k:
        candidates = winning_rows
    else:
        candidates = np.arange(fm.n_rows)

    # Sorting each row first makes the sum independent of channel order
    row_sums = np.sort(fm.values[candidates], axis=1).sum(axis=1)
    order = np.lexsort((candidates, -row_sums, -wins[candidates]))
    chosen = candidates[order[:k]]
    return KeypointSet(fm.point_index[chosen], wins[chosen])


def select_fps(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """
    Greedy farthest point sampling.

    Args:
        points: n x 3 points
        k: Number of points to pick (all points when k >= n)
        start: Index of the first pick

    Returns:
        Picked indices in pick order
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n == 0:
        raise EmptyInputError("Farthest point sampling needs at least one point")
    if k <= 0:
        raise ConfigurationError(f"FPS pick count must be positive, got {k}")
    if not 0 <= start < n:
        raise ConfigurationError(f"FPS start index {start} outside [0, {n})")
    return _greedy_spread(points, min(k, n), start, scores=None)


def select_edge_points(model: ObjectModel, m: int, neighbors: int = SALIENCY_NEIGHBORS) -> np.ndarray:
    """
    Pick m distinctive, well-spread model points.

    Approximates render-based SIFT-FPS: a curvature saliency per vertex
    replaces 2D texture keypoints, and the greedy farthest-point rule is
    weighted by that saliency. The first pick is the most salient vertex,
    every later pick maximizes saliency * distance to the picked set.

    Picks are drawn from the convex-hull vertices when there are at least m
    of them (the corners of a box, the rims and side of a cylinder, every
    vertex of a sphere), otherwise from all vertices.

    Args:
        model: Object model
        m: Number of edge points
        neighbors: Neighborhood size for normals and saliency

    Returns:
        m x 3 edge points in object coordinates
    """
    if m <= 0:
        raise ConfigurationError(f"Edge point count must be positive, got {m}")
    vertices = model.vertices
    if m > vertices.shape[0]:
        raise ConfigurationError(f"Model has {vertices.shape[0]} vertices, cannot pick {m} edge points")
    if m == vertices.shape[0]:
        return vertices.copy()

    saliency = vertex_saliency(vertices, neighbors)
    pool = protruding_vertices(vertices)
    if pool.shape[0] < m:
        pool = np.arange(vertices.shape[0])
    scores = saliency[pool]
    picks = _greedy_spread(vertices[pool], m, int(np.argmax(scores)), scores=scores)
    logger.debug(f"Selected {m} edge points for model {model.name or model.class_id} "
                 f"from {pool.shape[0]} candidates")
    return vertices[pool[picks]]


def protruding_vertices(vertices: np.ndarray) -> np.ndarray:
    """Sorted indices of the convex-hull vertices (all indices when no hull exists)"""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    try:
        return np.sort(ConvexHull(vertices).vertices).astype(np.int64)
    except (QhullError, ValueError):
        logger.debug("Convex hull unavailable, every vertex is a candidate")
        return np.arange(vertices.shape[0])


def vertex_saliency(vertices: np.ndarray, neighbors: int = SALIENCY_NEIGHBORS) -> np.ndarray:
    """
    Curvature proxy per vertex: mean angle between the vertex normal and the
    normals of its nearest neighbors. Normals come from a local PCA and are
    unoriented. Values are scaled to the maximum and quantized to 1%.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    normals = estimate_normals(vertices, neighbors)
    k = min(neighbors + 1, vertices.shape[0])
    _, idx = cKDTree(vertices).query(vertices, k=k)
    neighbor_idx = idx[:, 1:]
    cosines = np.abs(np.einsum("ij,ikj->ik", normals, normals[neighbor_idx]))
    angles = np.arccos(np.clip(cosines, 0.0, 1.0))
    saliency = angles.mean(axis=1)

    peak = saliency.max()
    if peak <= 0:
        return np.ones(vertices.shape[0])
    return np.round(saliency / peak * SALIENCY_LEVELS) / SALIENCY_LEVELS


def estimate_normals(points: np.ndarray, neighbors: int = SALIENCY_NEIGHBORS) -> np.ndarray:
    """Unit normal per point: smallest principal axis of its neighborhood"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    k = min(neighbors + 1, points.shape[0])
    _, idx = cKDTree(points).query(points, k=k)
    idx = idx.reshape(points.shape[0], -1)
    local = points[idx] - points[idx].mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", local, local) / k
    _, eigenvectors = np.linalg.eigh(covariance)
    return eigenvectors[:, :, 0]


def _greedy_spread(points: np.ndarray, k: int, start: int, scores: Optional[np.ndarray]) -> np.ndarray:
    picks = [start]
    picked = np.zeros(points.shape[0], dtype=bool)
    picked[start] = True
    min_dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(1, k):
        objective = min_dist if scores is None else scores * min_dist
        objective = np.where(picked, -1.0, objective)
        nxt = int(np.argmax(objective))
        picked[nxt] = True
        picks.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.asarray(picks, dtype=np.int64)
