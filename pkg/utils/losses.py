"""
Training losses with hand-derived gradients.

All offset losses are normalised by the number of points N only, and weigh
each point by its role weight W(p_i) (keypoint / background / other).
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from models.config import PointRoleWeights
from models.errors import ConfigurationError, ValidationError
from models.predictions import validate_probability_rows

# Setup logging
logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (3.0, 1.0, 1.0)
DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
PROBABILITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LossValue:
    """Loss value and its gradient with respect to the differentiated input"""
    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not (self.value >= 0) or not np.all(np.isfinite(self.gradient)):
            raise ValidationError(f"Invalid loss value {self.value} or non-finite gradient")


def _point_weights(w: PointRoleWeights, n: int) -> np.ndarray:
    weights = w.per_point(n)
    if weights.shape[0] != n:
        raise ConfigurationError(f"Role weights cover {weights.shape[0]} points, expected {n}")
    return weights


def _weighted_offset_loss(pred: np.ndarray, truth: np.ndarray, w: PointRoleWeights, norm: str) -> LossValue:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"Prediction shape {pred.shape} differs from target shape {truth.shape}")
    n = pred.shape[0]
    if n == 0:
        raise ConfigurationError("Offset loss needs at least one point")

    weights = _point_weights(w, n).reshape((n,) + (1,) * (pred.ndim - 1))
    error = pred - truth
    if norm == "l1":
        per_component = np.abs(error) * weights
        value = float(per_component.sum() / n)
        gradient = np.sign(error) * weights / n
    elif norm == "l2":
        length = np.linalg.norm(error, axis=-1, keepdims=True)
        value = float((length * weights).sum() / n)
        safe = np.where(length > 0, length, 1.0)
        gradient = np.where(length > 0, error / safe, 0.0) * weights / n
    else:
        raise ConfigurationError(f"Unknown offset loss norm {norm!r}")
    return LossValue(value, gradient)


def edge_offset_loss(pred: np.ndarray, truth: np.ndarray, w: PointRoleWeights, norm: str = "l1") -> LossValue:
    """
    Edge-point offset loss: (1/N) sum_i sum_j ||of_i^j - of_i^j*||_1 * W(p_i).

    Args:
        pred: N x M x 3 predicted offsets
        truth: N x M x 3 target offsets
        w: Role weights carrying one role per point
        norm: "l1" (sum of absolute components) or "l2" (Euclidean length)

    Returns:
        LossValue with the gradient with respect to pred
    """
    pred = np.asarray(pred)
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ConfigurationError(f"Edge offsets must be N x M x 3, got {pred.shape}")
    return _weighted_offset_loss(pred, truth, w, norm)


def center_offset_loss(pred: np.ndarray, truth: np.ndarray, w: PointRoleWeights, norm: str = "l1") -> LossValue:
    """Center offset loss: (1/N) sum_i ||dx_i - dx_i*||_1 * W(p_i)"""
    pred = np.asarray(pred)
    if pred.ndim != 2 or pred.shape[-1] != 3:
        raise ConfigurationError(f"Center offsets must be N x 3, got {pred.shape}")
    return _weighted_offset_loss(pred, truth, w, norm)


def focal_semantic_loss(conf: np.ndarray, labels: np.ndarray, alpha: float = DEFAULT_FOCAL_ALPHA,
                        gamma: float = DEFAULT_FOCAL_GAMMA) -> LossValue:
    """
    Focal loss on class probabilities: mean_i -alpha (1 - q_i)^gamma log(q_i),
    with q_i the probability of the true class clamped to [1e-12, 1].

    Args:
        conf: N x (C + 1) probabilities (already normalised)
        labels: N x (C + 1) one-hot targets

    Returns:
        LossValue with the gradient with respect to conf
    """
    conf = np.asarray(conf, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if conf.shape != labels.shape or conf.ndim != 2:
        raise ConfigurationError(f"Confidence shape {conf.shape} differs from label shape {labels.shape}")
    if conf.shape[0] == 0:
        raise ConfigurationError("Focal loss needs at least one point")
    validate_probability_rows(conf)
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise ValidationError("Labels must be one-hot rows")

    n = conf.shape[0]
    raw_q = (conf * labels).sum(axis=1)
    q = np.clip(raw_q, PROBABILITY_FLOOR, 1.0)
    log_q = np.log(q)
    one_minus = 1.0 - q
    value = float(np.sum(-alpha * one_minus ** gamma * log_q) / n)

    # d/dq of -alpha (1-q)^g log q
    decay_term = np.zeros(n)
    if gamma != 0:
        active = one_minus > 0
        decay_term[active] = gamma * one_minus[active] ** (gamma - 1.0) * log_q[active]
    dq = alpha * (decay_term - one_minus ** gamma / q)
    dq = np.where(raw_q < PROBABILITY_FLOOR, 0.0, dq)
    gradient = labels * (dq / n)[:, None]
    return LossValue(value, gradient)


def multi_task_loss(l_edge: float, l_center: float, l_sem: float,
                    lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> float:
    """lambda_1 * L_edge + lambda_2 * L_center + lambda_3 * L_semantic"""
    if len(lambdas) != 3:
        raise ConfigurationError("multi_task_loss needs exactly 3 weights")
    return float(lambdas[0] * l_edge + lambdas[1] * l_center + lambdas[2] * l_sem)
