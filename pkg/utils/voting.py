import logging
from dataclasses import replace
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from models.errors import ConfigurationError, EmptyInputError, ValidationError
from models.geometry import RigidTransform
from models.predictions import InstanceHypothesis, PredictionField
from models.scene import BACKGROUND, ObjectModel
from utils.geometry import fit_rigid

# Setup logging
logger = logging.getLogger(__name__)

DEFAULT_CENTER_BANDWIDTH = 0.05
DEFAULT_EDGE_BANDWIDTH = 0.03
DEFAULT_EPS = 1e-5
DEFAULT_MAX_ITER = 100
DEFAULT_MIN_CLUSTER_SIZE = 30

# Seeds are shifted in blocks of this many; the block size must not depend on
# the number of samples so that filtered and unfiltered runs reduce identically
SEED_CHUNK = 256
GAUSSIAN_CUTOFF = 3.0


class MeanShiftResult(NamedTuple):
    centers: np.ndarray
    assignment: np.ndarray


def filter_background(pred: PredictionField) -> Dict[int, np.ndarray]:
    """
    Drop points whose most likely class is background.

    Returns:
        Map class_id -> sorted indices of the points predicted as that class
    """
    labels = pred.argmax_labels()
    groups = {}
    for class_id in np.unique(labels):
        if class_id == BACKGROUND:
            continue
        groups[int(class_id)] = np.flatnonzero(labels == class_id)
    logger.debug(f"Background filter kept {sum(len(v) for v in groups.values())} of {pred.n_points} points")
    return groups


def mean_shift(samples: np.ndarray, bandwidth: float, eps: float = DEFAULT_EPS,
               max_iter: int = DEFAULT_MAX_ITER, weights: Optional[np.ndarray] = None,
               kernel: str = "flat") -> MeanShiftResult:
    """
    Mean-shift mode seeking.

    Every sample with positive weight starts a seed that moves to the weighted
    mean of the samples within `bandwidth` until it moves less than `eps`.
    Converged modes are visited by decreasing support and kept unless they
    lie within bandwidth / 2 of an already kept mode. Each positive-weight
    sample is then assigned to its nearest kept mode.

    Zero-weight samples never seed or pull a mode but are still part of the
    distance evaluation, which is exactly what an unfiltered run pays for.

    Args:
        samples: n x 3 samples
        bandwidth: Kernel radius (meters)
        eps: Convergence threshold on the shift length (meters)
        max_iter: Iteration cap per seed
        weights: Optional n nonnegative sample weights
        kernel: "flat" or "gaussian" (truncated at 3 bandwidths)

    Returns:
        MeanShiftResult(centers, assignment) with assignment -1 for
        zero-weight samples
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if bandwidth <= 0:
        raise ConfigurationError(f"Mean-shift bandwidth must be positive, got {bandwidth}")
    if kernel not in ("flat", "gaussian"):
        raise ConfigurationError(f"Unknown mean-shift kernel {kernel!r}")
    if samples.shape[0] == 0:
        raise EmptyInputError("Mean shift needs at least one sample")

    if weights is None:
        weights = np.ones(samples.shape[0])
    else:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != samples.shape[0] or np.any(weights < 0):
            raise ConfigurationError("Mean-shift weights must be nonnegative, one per sample")

    positive = np.flatnonzero(weights > 0)
    assignment = np.full(samples.shape[0], -1, dtype=np.int64)
    if positive.shape[0] == 0:
        return MeanShiftResult(np.zeros((0, 3)), assignment)

    shifter = _Shifter(samples, positive, weights[positive], bandwidth, kernel)
    modes = samples[positive].copy()
    active = np.arange(positive.shape[0])
    for iteration in range(max_iter):
        if active.shape[0] == 0:
            break
        shifted = shifter.shift(modes[active])
        moved = np.linalg.norm(shifted - modes[active], axis=1)
        modes[active] = shifted
        active = active[moved >= eps]
    if active.shape[0]:
        logger.debug(f"Mean shift: {active.shape[0]} seeds hit max_iter={max_iter}")

    support = shifter.support(modes)
    order = np.lexsort((np.arange(modes.shape[0]), -support))
    merge_radius = bandwidth / 2.0
    kept = []
    for idx in order:
        if kept and np.min(np.linalg.norm(modes[kept] - modes[idx], axis=1)) <= merge_radius:
            continue
        kept.append(idx)
    centers = modes[kept]

    pos_samples = samples[positive]
    d2 = ((pos_samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assignment[positive] = np.argmin(d2, axis=1)
    return MeanShiftResult(centers, assignment)


class _Shifter:
    """Chunked kernel-weighted means of the positive-weight samples"""

    def __init__(self, samples, positive, pos_weights, bandwidth, kernel):
        self.samples = samples
        self.positive = positive
        self.pos_weights = pos_weights
        self.bandwidth = bandwidth
        self.kernel = kernel
        # Means are taken relative to one fixed anchor so unanimous votes stay exact
        self.anchor = samples[positive[0]]
        self.centered = samples[positive] - self.anchor

    def _kernel_rows(self, x: np.ndarray) -> np.ndarray:
        s = self.samples
        d2 = ((x[:, 0:1] - s[None, :, 0]) ** 2
              + (x[:, 1:2] - s[None, :, 1]) ** 2
              + (x[:, 2:3] - s[None, :, 2]) ** 2)
        d2 = d2[:, self.positive]
        h2 = self.bandwidth * self.bandwidth
        if self.kernel == "flat":
            return (d2 <= h2) * self.pos_weights
        k = np.exp(-0.5 * d2 / h2)
        k[d2 > (GAUSSIAN_CUTOFF ** 2) * h2] = 0.0
        return k * self.pos_weights

    def shift(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for lo in range(0, x.shape[0], SEED_CHUNK):
            block = x[lo:lo + SEED_CHUNK]
            k = self._kernel_rows(block)
            total = k.sum(axis=1)
            stuck = total <= 0
            total[stuck] = 1.0
            out[lo:lo + SEED_CHUNK] = self.anchor + (k @ self.centered) / total[:, None]
            out[lo:lo + SEED_CHUNK][stuck] = block[stuck]
        return out

    def support(self, x: np.ndarray) -> np.ndarray:
        h2 = self.bandwidth * self.bandwidth
        counts = np.empty(x.shape[0])
        for lo in range(0, x.shape[0], SEED_CHUNK):
            block = x[lo:lo + SEED_CHUNK]
            s = self.samples
            d2 = ((block[:, 0:1] - s[None, :, 0]) ** 2
                  + (block[:, 1:2] - s[None, :, 1]) ** 2
                  + (block[:, 2:3] - s[None, :, 2]) ** 2)[:, self.positive]
            counts[lo:lo + SEED_CHUNK] = ((d2 <= h2) * self.pos_weights).sum(axis=1)
        return counts


def cluster_instances(points: np.ndarray, pred: PredictionField, bandwidth: float = DEFAULT_CENTER_BANDWIDTH,
                      class_id: Optional[int] = None, pool: Optional[np.ndarray] = None,
                      min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE, eps: float = DEFAULT_EPS,
                      max_iter: int = DEFAULT_MAX_ITER, kernel: str = "flat") -> List[InstanceHypothesis]:
    """
    Separate instances by clustering the voted centers p_i + dx_i.

    Args:
        points: N x 3 point positions (rows aligned with pred)
        pred: Prediction rows for the same points
        bandwidth: Mean-shift bandwidth (meters)
        class_id: Only points predicted as this class vote; None means every
            non-background point votes and each cluster takes its majority class
        pool: Rows taking part in the distance evaluation (default: all rows);
            rows that do not vote get zero weight
        min_cluster_size: Smaller clusters are discarded

    Returns:
        Hypotheses with point_indices, class and voted center; edge points unset
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] != pred.n_points:
        raise ConfigurationError("cluster_instances: points and predictions differ in length")
    if points.shape[0] == 0:
        return []
    pool = np.arange(points.shape[0]) if pool is None else np.unique(np.asarray(pool, dtype=np.int64))
    labels = pred.argmax_labels()
    pool_labels = labels[pool]
    voters = pool_labels != BACKGROUND if class_id is None else pool_labels == class_id
    if not np.any(voters):
        return []

    votes = points[pool] + pred.center_offset[pool]
    result = mean_shift(votes, bandwidth, eps=eps, max_iter=max_iter,
                        weights=voters.astype(np.float64), kernel=kernel)

    hypotheses = []
    for mode_idx, center in enumerate(result.centers):
        members = pool[result.assignment == mode_idx]
        if members.shape[0] < min_cluster_size:
            logger.debug(f"Discarding cluster of {members.shape[0]} points (< {min_cluster_size})")
            continue
        if class_id is None:
            member_labels = labels[members]
            hyp_class = int(np.argmax(np.bincount(member_labels)))
        else:
            hyp_class = int(class_id)
        hypotheses.append(InstanceHypothesis(hyp_class, members, center))
    return hypotheses


def vote_edge_points(hyp: InstanceHypothesis, points: np.ndarray, pred: PredictionField,
                     bandwidth: float = DEFAULT_EDGE_BANDWIDTH, pool: Optional[np.ndarray] = None,
                     eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                     kernel: str = "flat") -> InstanceHypothesis:
    """
    Vote for the M edge points of one instance.

    For each edge index j the candidates p_i + of_i^j of the member points are
    clustered; the mode with the most assigned votes becomes edge point j and
    its vote count the support.

    Args:
        hyp: Hypothesis from cluster_instances
        points: N x 3 point positions
        pred: Predictions for the same rows
        bandwidth: Mean-shift bandwidth (meters)
        pool: Rows taking part in the distance evaluation (default: the members)

    Returns:
        Copy of hyp with voted_edge_points and vote_support filled
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pool = hyp.point_indices if pool is None else np.unique(np.asarray(pool, dtype=np.int64))
    weights = np.isin(pool, hyp.point_indices).astype(np.float64)
    if not np.any(weights):
        raise ValidationError("vote_edge_points: the pool contains none of the hypothesis points")

    m = pred.m_edge_points
    edge_points = np.zeros((m, 3))
    support = np.zeros(m, dtype=np.int64)
    base = points[pool]
    for j in range(m):
        votes = base + pred.edge_offsets[pool, j]
        result = mean_shift(votes, bandwidth, eps=eps, max_iter=max_iter, weights=weights, kernel=kernel)
        counts = np.bincount(result.assignment[result.assignment >= 0], minlength=result.centers.shape[0])
        best = int(np.argmax(counts))
        edge_points[j] = result.centers[best]
        support[j] = counts[best]
    return replace(hyp, voted_edge_points=edge_points, vote_support=support)


def estimate_pose(hyp: InstanceHypothesis, model: ObjectModel, use_vote_weights: bool = False) -> RigidTransform:
    """
    Least-squares fit of the model edge points onto the voted edge points.

    Args:
        hyp: Hypothesis with voted edge points
        model: Model whose edge_points are in the same order
        use_vote_weights: Weight each correspondence by its vote support

    Returns:
        Object-to-camera pose
    """
    if not hyp.has_edge_points:
        raise ValidationError("estimate_pose needs a hypothesis with voted edge points")
    if model.num_edge_points != hyp.voted_edge_points.shape[0]:
        raise ConfigurationError(
            f"Model has {model.num_edge_points} edge points, hypothesis voted {hyp.voted_edge_points.shape[0]}")
    weights = hyp.vote_support if use_vote_weights else None
    return fit_rigid(model.edge_points, hyp.voted_edge_points, weights=weights)
