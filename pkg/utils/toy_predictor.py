"""
Desk-scale point-wise predictor.

A small rectifier MLP maps hand-crafted per-point features to the three
prediction heads (semantic logits, edge offsets, center offset). It is
trained from scratch with SGD + momentum on the multi-task loss, with the
loss weight of each point decided by dynamic keypoint selection on the
current last-hidden-layer activations.
"""
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.config import (ROLE_BACKGROUND, ROLE_KEYPOINT, ROLE_OTHER,
                           PointRoleWeights, TrainConfig)
from models.errors import ConfigurationError, EmptyInputError, TrainingDivergedError
from models.mlp import MlpModel
from models.predictions import FeatureMap, PredictionField
from models.scene import BACKGROUND, SceneSample
from utils.keypoints import select_dynamic_keypoints, select_fps
from utils.losses import (center_offset_loss, edge_offset_loss,
                          focal_semantic_loss, multi_task_loss)

# Setup logging
logger = logging.getLogger(__name__)

NEIGHBORHOOD_SIZE = 16
FEATURE_NAMES = (
    "rel_x", "rel_y", "rel_z",      # position relative to the scene centroid
    "eig_0", "eig_1", "eig_2",      # local covariance eigenvalues, ascending
    "red", "green", "blue",         # synthetic color
)
FEATURE_DIM = len(FEATURE_NAMES)
FINITE_DIFFERENCE_STEP = 1e-6
# Gradients smaller than this are compared in absolute terms
GRADIENT_CHECK_FLOOR = 1e-4


class ForwardCache(NamedTuple):
    """Activations kept for backpropagation"""
    layer_inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    outputs: np.ndarray

    @property
    def last_hidden(self) -> np.ndarray:
        return self.layer_inputs[-1]


class TrainingTargets(NamedTuple):
    labels: np.ndarray          # N x (C + 1) one-hot
    edge_offsets: np.ndarray    # N x M x 3
    center_offset: np.ndarray   # N x 3


class LossBreakdown(NamedTuple):
    total: float
    edge: float
    center: float
    semantic: float


# ─── Features ──────────────────────────────────────────────────

def featurize_points(points: np.ndarray, colors: np.ndarray,
                     neighbors: int = NEIGHBORHOOD_SIZE) -> FeatureMap:
    """
    Per-point features: coordinates relative to the centroid, eigenvalues of
    the covariance of the k nearest neighbours (the point included) and color.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n == 0:
        raise EmptyInputError("featurize needs at least one point")
    if colors.shape[0] != n:
        raise ConfigurationError(f"Got {n} points but {colors.shape[0]} colors")

    relative = points - points.mean(axis=0)
    k = min(neighbors, n)
    _, idx = cKDTree(points).query(points, k=k)
    idx = np.asarray(idx).reshape(n, k)
    local = points[idx] - points[idx].mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", local, local) / k
    eigenvalues = np.clip(np.linalg.eigvalsh(covariance), 0.0, None)

    values = np.hstack([relative, eigenvalues, colors])
    return FeatureMap(values, np.arange(n))


def featurize(scene: SceneSample) -> FeatureMap:
    """FEATURE_DIM hand-crafted features per scene point (see FEATURE_NAMES)"""
    return featurize_points(scene.points, scene.synthetic_color)


# ─── Network ───────────────────────────────────────────────────

def init_model(input_dim: int, num_classes: int, m_edge_points: int, hidden_sizes: Sequence[int],
               rng: np.random.Generator, input_shift: Optional[np.ndarray] = None,
               input_scale: Optional[np.ndarray] = None) -> MlpModel:
    """He-initialised weights, zero biases"""
    output_dim = (num_classes + 1) + 3 * m_edge_points + 3
    sizes = [input_dim] + list(hidden_sizes) + [output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, num_classes, m_edge_points,
                    input_shift=np.zeros(input_dim) if input_shift is None else input_shift,
                    input_scale=np.ones(input_dim) if input_scale is None else input_scale)


def standardisation(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation (1 for constant channels)"""
    values = np.asarray(values, dtype=np.float64)
    scale = values.std(axis=0)
    return values.mean(axis=0), np.where(scale > 0, scale, 1.0)


def count_parameters(model: MlpModel) -> int:
    return int(sum(p.size for p in model.parameters()))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_pass(model: MlpModel, values: np.ndarray) -> ForwardCache:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != model.input_dim:
        raise ConfigurationError(f"Feature dimension {values.shape[-1]} does not match model input {model.input_dim}")
    h = (values - model.input_shift) / model.input_scale
    layer_inputs, pre_activations = [], []
    last = len(model.weights) - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        layer_inputs.append(h)
        a = h @ w + b
        pre_activations.append(a)
        h = a if layer == last else np.maximum(a, 0.0)
    return ForwardCache(layer_inputs, pre_activations, h)


def split_outputs(model: MlpModel, outputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = outputs.shape[0]
    c1 = model.num_classes + 1
    m3 = 3 * model.m_edge_points
    logits = outputs[:, :c1]
    edge = outputs[:, c1:c1 + m3].reshape(n, model.m_edge_points, 3)
    center = outputs[:, c1 + m3:]
    return logits, edge, center


def forward(model: MlpModel, fm: FeatureMap) -> PredictionField:
    """
    Run the network on a feature map.

    Returns:
        PredictionField with softmax class confidences and raw offsets
    """
    logits, edge, center = split_outputs(model, forward_pass(model, fm.values).outputs)
    return PredictionField(softmax(logits), edge, center)


def backward(model: MlpModel, cache: ForwardCache, d_outputs: np.ndarray) -> List[np.ndarray]:
    """Gradients of the loss for every parameter, in model.parameters() order"""
    grads_w: List[np.ndarray] = [None] * len(model.weights)
    grads_b: List[np.ndarray] = [None] * len(model.weights)
    delta = d_outputs
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = cache.layer_inputs[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ model.weights[layer].T) * (cache.pre_activations[layer - 1] > 0)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend([gw, gb])
    return grads


# ─── Loss ──────────────────────────────────────────────────────

def targets_from_scene(scene: SceneSample, rows: Optional[np.ndarray] = None) -> TrainingTargets:
    """One-hot labels (background in the last column) and offsets of scene rows"""
    rows = np.arange(scene.n_points) if rows is None else np.asarray(rows, dtype=np.int64)
    c = scene.num_classes
    columns = np.where(scene.class_label[rows] == BACKGROUND, c, scene.class_label[rows])
    labels = np.zeros((rows.shape[0], c + 1))
    labels[np.arange(rows.shape[0]), columns] = 1.0
    return TrainingTargets(labels, scene.gt_edge_offsets[rows], scene.gt_center_offset[rows])


def targets_from_prediction(truth: PredictionField) -> TrainingTargets:
    return TrainingTargets(truth.class_confidence, truth.edge_offsets, truth.center_offset)


def multi_task_gradient(model: MlpModel, outputs: np.ndarray, targets: TrainingTargets,
                        weights: PointRoleWeights, lambdas: Sequence[float] = (3.0, 1.0, 1.0),
                        focal_alpha: float = 0.25, focal_gamma: float = 2.0,
                        loss_norm: str = "l1") -> Tuple[LossBreakdown, np.ndarray]:
    """
    Multi-task loss of raw network outputs and its gradient with respect to them.

    The semantic gradient is taken through the softmax:
    dL/dz = p * (dL/dp - sum(dL/dp * p)).
    """
    logits, edge, center = split_outputs(model, outputs)
    conf = softmax(logits)
    semantic = focal_semantic_loss(conf, targets.labels, focal_alpha, focal_gamma)
    edge_loss = edge_offset_loss(edge, targets.edge_offsets, weights, loss_norm)
    center_loss = center_offset_loss(center, targets.center_offset, weights, loss_norm)
    total = multi_task_loss(edge_loss.value, center_loss.value, semantic.value, lambdas)

    d_conf = lambdas[2] * semantic.gradient
    d_logits = conf * (d_conf - np.sum(d_conf * conf, axis=1, keepdims=True))
    n = outputs.shape[0]
    d_outputs = np.hstack([
        d_logits,
        lambdas[0] * edge_loss.gradient.reshape(n, -1),
        lambdas[1] * center_loss.gradient,
    ])
    return LossBreakdown(total, edge_loss.value, center_loss.value, semantic.value), d_outputs


def gradient_check(model: MlpModel, fm: FeatureMap, truth: PredictionField,
                   weights: Optional[PointRoleWeights] = None, lambdas: Sequence[float] = (3.0, 1.0, 1.0),
                   focal_alpha: float = 0.25, focal_gamma: float = 2.0, loss_norm: str = "l1",
                   step: float = FINITE_DIFFERENCE_STEP) -> float:
    """
    Compare analytic parameter gradients of the multi-task loss with central
    finite differences.

    Args:
        model: Small network (every parameter is perturbed twice)
        fm: Input features
        truth: Targets; class_confidence must be one-hot
        weights: Role weights with roles for every row (default: all "other")

    Returns:
        Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-4)
    """
    targets = targets_from_prediction(truth)
    if weights is None:
        weights = PointRoleWeights()
    if weights.roles is None:
        weights = weights.with_roles(np.full(fm.n_rows, ROLE_OTHER))

    def loss_at(trial: MlpModel) -> float:
        outputs = forward_pass(trial, fm.values).outputs
        return multi_task_gradient(trial, outputs, targets, weights, lambdas,
                                   focal_alpha, focal_gamma, loss_norm)[0].total

    cache = forward_pass(model, fm.values)
    _, d_outputs = multi_task_gradient(model, cache.outputs, targets, weights, lambdas,
                                       focal_alpha, focal_gamma, loss_norm)
    analytic = backward(model, cache, d_outputs)

    trial = model.copy()
    worst = 0.0
    for param, grad in zip(trial.parameters(), analytic):
        flat = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.shape[0]):
            original = flat[i]
            flat[i] = original + step
            upper = loss_at(trial)
            flat[i] = original - step
            lower = loss_at(trial)
            flat[i] = original
            numeric = (upper - lower) / (2 * step)
            scale = max(abs(flat_grad[i]), abs(numeric), GRADIENT_CHECK_FLOOR)
            worst = max(worst, abs(flat_grad[i] - numeric) / scale)
    logger.debug(f"Gradient check over {count_parameters(model)} parameters: max relative error {worst:.3e}")
    return worst


# ─── Training ──────────────────────────────────────────────────

def assign_roles(scene: SceneSample, rows: np.ndarray, hidden: np.ndarray, k: int,
                 selector: str = "dks") -> np.ndarray:
    """
    Point roles for one batch.

    Background rows (ground truth) get ROLE_BACKGROUND. Keypoints are chosen
    per ground-truth instance (DKS on the hidden activations, or FPS on the
    positions), the per-instance rankings are interleaved rank by rank and
    the first k become ROLE_KEYPOINT. All other rows are ROLE_OTHER.
    """
    roles = np.full(rows.shape[0], ROLE_OTHER, dtype=np.int8)
    instance_label = scene.instance_label[rows]
    roles[scene.class_label[rows] == BACKGROUND] = ROLE_BACKGROUND
    if k <= 0:
        return roles

    rankings = []
    for instance_id in np.unique(instance_label[instance_label != BACKGROUND]):
        local = np.flatnonzero(instance_label == instance_id)
        if selector == "dks":
            picks = select_dynamic_keypoints(FeatureMap(hidden[local], local), min(k, local.shape[0])).indices
        else:
            picks = local[select_fps(scene.points[rows[local]], k)]
        rankings.append(picks)

    chosen = []
    for rank in range(max((len(r) for r in rankings), default=0)):
        chosen.extend(r[rank] for r in rankings if rank < len(r))
    roles[np.asarray(chosen[:k], dtype=np.int64)] = ROLE_KEYPOINT
    return roles


def _batch_rows(scene: SceneSample, batch_points: int, rng: np.random.Generator) -> np.ndarray:
    if scene.n_points <= batch_points:
        return np.arange(scene.n_points)
    return np.sort(rng.choice(scene.n_points, size=batch_points, replace=False))


def train(scenes: Sequence[SceneSample], cfg: TrainConfig = TrainConfig()) -> Tuple[MlpModel, List[float]]:
    """
    Train a fresh model on synthetic scenes.

    Every scene contributes one fixed batch of cfg.batch_points rows, drawn
    once from the seeded generator; an epoch visits the batches in scene
    order. Each step runs forward, assigns point roles from the current
    hidden activations, evaluates the multi-task loss and applies one
    momentum update.

    Returns:
        (trained model, mean loss of every epoch)
    """
    if not scenes:
        raise EmptyInputError("train needs at least one scene")
    num_classes = scenes[0].num_classes
    m = scenes[0].m_edge_points
    if any(s.num_classes != num_classes or s.m_edge_points != m for s in scenes):
        raise ConfigurationError("All training scenes must share num_classes and the edge point count")

    rng = np.random.default_rng(cfg.seed)
    batches = []
    for scene in scenes:
        rows = _batch_rows(scene, cfg.batch_points, rng)
        batches.append((scene, rows, featurize(scene).values[rows], targets_from_scene(scene, rows)))

    shift, scale = standardisation(np.vstack([values for _, _, values, _ in batches]))
    model = init_model(FEATURE_DIM, num_classes, m, cfg.hidden_sizes, rng, shift, scale)
    velocity = [np.zeros_like(p) for p in model.parameters()]
    logger.info(f"Training {count_parameters(model)} parameters on {len(scenes)} scenes for {cfg.epochs} epochs")

    history: List[float] = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for scene, rows, values, targets in batches:
            cache = forward_pass(model, values)
            if not np.all(np.isfinite(cache.outputs)):
                raise TrainingDivergedError(epoch, float("nan"))
            roles = assign_roles(scene, rows, cache.last_hidden, cfg.dks_k, cfg.selector)
            breakdown, d_outputs = multi_task_gradient(
                model, cache.outputs, targets, cfg.role_weights.with_roles(roles), cfg.lambdas,
                cfg.focal_alpha, cfg.focal_gamma, cfg.loss_norm)
            if not np.isfinite(breakdown.total):
                raise TrainingDivergedError(epoch, breakdown.total)
            losses.append(breakdown.total)

            grads = backward(model, cache, d_outputs)
            for param, vel, grad in zip(model.parameters(), velocity, grads):
                vel *= cfg.momentum
                vel -= cfg.learning_rate * grad
                param += vel

        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss) or not model.is_finite():
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(epoch_loss)
        if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
            logger.info(f"Epoch {epoch}/{cfg.epochs}: loss {epoch_loss:.6f}")
        else:
            logger.debug(f"Epoch {epoch}/{cfg.epochs}: loss {epoch_loss:.6f}")
    return model, history


def predict_scene(model: MlpModel, scene: SceneSample) -> PredictionField:
    """featurize + forward"""
    if model.num_classes != scene.num_classes:
        raise ConfigurationError(f"Model predicts {model.num_classes} classes, scene has {scene.num_classes}")
    return forward(model, featurize(scene))
