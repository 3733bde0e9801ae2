from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from models.errors import ConfigurationError
from models.geometry import CameraIntrinsics

# Point roles for the loss weight W(p_i)
ROLE_OTHER = 0
ROLE_KEYPOINT = 1
ROLE_BACKGROUND = 2

SELECTORS = ("dks", "fps")
KERNELS = ("flat", "gaussian")
LOSS_NORMS = ("l1", "l2")


@dataclass(frozen=True)
class PointRoleWeights:
    """
    Loss weight per point role. roles holds one ROLE_* tag per point and is
    only needed when the weights are applied to a concrete set of points.
    """
    w_keypoint: float = 2.0
    w_background: float = 0.0
    w_others: float = 1.0
    roles: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("w_keypoint", "w_background", "w_others"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.roles is not None:
            roles = np.array(self.roles, dtype=np.int8, copy=True).reshape(-1)
            if np.any((roles < ROLE_OTHER) | (roles > ROLE_BACKGROUND)):
                raise ConfigurationError("roles must be ROLE_OTHER, ROLE_KEYPOINT or ROLE_BACKGROUND")
            roles.flags.writeable = False
            object.__setattr__(self, "roles", roles)

    def with_roles(self, roles: np.ndarray) -> "PointRoleWeights":
        return replace(self, roles=roles)

    def per_point(self, n: Optional[int] = None) -> np.ndarray:
        """W(p_i) for every point; points without roles count as 'other'"""
        if self.roles is None:
            if n is None:
                raise ConfigurationError("PointRoleWeights has no roles and no point count")
            return np.full(n, self.w_others)
        table = np.array([self.w_others, self.w_keypoint, self.w_background])
        return table[self.roles]


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor and prediction corruption for synthetic scenes and oracle outputs"""
    depth_sigma: float = 0.0
    offset_sigma: float = 0.0
    label_flip_rate: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_sigma < 0 or self.offset_sigma < 0:
            raise ConfigurationError("Noise sigmas must be nonnegative")
        for name in ("label_flip_rate", "dropout_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class BackgroundPlane:
    """Textured plane n . x = offset behind the objects (camera frame, meters)"""
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 1.0
    checker_size: float = 0.05

    def __post_init__(self):
        if np.linalg.norm(self.normal) == 0:
            raise ConfigurationError("Background plane normal must be nonzero")
        if self.checker_size <= 0:
            raise ConfigurationError("Background checker size must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every tunable of the pipeline. Defaults follow the published settings:
    N = 12000 seed points, M = 8 edge points, K = 25 keypoints,
    lambda = (3, 1, 1) and w = (2, 0, 1).
    """
    n_points: int = 12000
    m_edge_points: int = 8
    k_keypoints: int = 25
    lambdas: Tuple[float, float, float] = (3.0, 1.0, 1.0)
    role_weights: PointRoleWeights = field(default_factory=PointRoleWeights)

    # Voting
    center_bandwidth: float = 0.05
    edge_bandwidth: float = 0.03
    min_cluster_size: int = 30
    kernel: str = "flat"
    mean_shift_eps: float = 1e-5
    mean_shift_max_iter: int = 100
    use_vote_weights: bool = False
    filter_background: bool = True

    # Keypoints and losses
    selector: str = "dks"
    loss_norm: str = "l1"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    # Evaluation
    auc_max_threshold: float = 0.10

    # Scenes
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    plane_depth: float = 1.0
    n_scenes: int = 10
    objects_per_scene: int = 3
    vertex_count: int = 500

    # Execution
    seed: int = 0
    repeat: int = 20
    workers: int = 4

    def __post_init__(self):
        positive_ints = ("n_points", "m_edge_points", "mean_shift_max_iter", "n_scenes",
                         "objects_per_scene", "repeat", "workers", "vertex_count")
        for name in positive_ints:
            if int(getattr(self, name)) <= 0:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.m_edge_points < 3:
            raise ConfigurationError("m_edge_points must be at least 3 for a rigid fit")
        if self.k_keypoints < 0:
            raise ConfigurationError("k_keypoints must be nonnegative")
        if self.min_cluster_size < 1:
            raise ConfigurationError("min_cluster_size must be at least 1")
        for name in ("center_bandwidth", "edge_bandwidth", "mean_shift_eps",
                     "auc_max_threshold", "plane_depth"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if len(self.lambdas) != 3:
            raise ConfigurationError("lambdas needs exactly 3 values")
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.loss_norm not in LOSS_NORMS:
            raise ConfigurationError(f"loss_norm must be one of {LOSS_NORMS}, got {self.loss_norm!r}")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))


@dataclass(frozen=True)
class TrainConfig:
    """Settings of the toy predictor trainer"""
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_points: int = 512
    seed: int = 0
    lambdas: Tuple[float, float, float] = (3.0, 1.0, 1.0)
    role_weights: PointRoleWeights = field(default_factory=PointRoleWeights)
    dks_k: int = 25
    selector: str = "dks"
    hidden_sizes: Tuple[int, ...] = (64, 64)
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    loss_norm: str = "l1"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_points < 1:
            raise ConfigurationError("batch_points must be at least 1")
        if self.dks_k < 0:
            raise ConfigurationError("dks_k must be nonnegative")
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.loss_norm not in LOSS_NORMS:
            raise ConfigurationError(f"loss_norm must be one of {LOSS_NORMS}, got {self.loss_norm!r}")
        if len(self.lambdas) != 3:
            raise ConfigurationError("lambdas needs exactly 3 values")
        if any(size <= 0 for size in self.hidden_sizes):
            raise ConfigurationError("hidden layer sizes must be positive")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "hidden_sizes", tuple(int(v) for v in self.hidden_sizes))
