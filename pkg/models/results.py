from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from models.errors import ValidationError
from models.geometry import RigidTransform
from models.predictions import InstanceHypothesis


@dataclass(frozen=True)
class PoseEstimate:
    """Estimated pose of one detected instance"""
    scene_id: int
    instance_id: int
    class_id: int
    pose: RigidTransform
    hypothesis: Optional[InstanceHypothesis] = None


@dataclass(frozen=True)
class TimingBreakdown:
    """Per-frame wall time in milliseconds (network forward / pose estimation)"""
    prediction_ms: float = 0.0
    pose_estimation_ms: float = 0.0
    total_ms: float = 0.0

    def __post_init__(self):
        if self.total_ms < self.prediction_ms + self.pose_estimation_ms - 1.0:
            raise ValidationError("total_ms is smaller than the sum of its stages")


@dataclass
class EstimateResult:
    """Output of one run_estimate call"""
    scene_id: int
    poses: List[PoseEstimate] = field(default_factory=list)
    hypotheses: List[InstanceHypothesis] = field(default_factory=list)
    timing: TimingBreakdown = field(default_factory=TimingBreakdown)
    status: str = "ok"  # "ok" or "no_foreground"


@dataclass(frozen=True)
class ClassRow:
    """
    One row of the evaluation table.

    adds_auc: AUC of ADD-S (%)
    add_sym_auc: AUC of ADD(S), i.e. ADD for asymmetric and ADD-S for
        symmetric objects (%)
    add01d_rate: share of ADD(S) below 10% of the diameter (%)
    kp_err_m: mean voted edge-point error (meters), NaN when not available
    """
    class_id: str
    adds_auc: float
    add_sym_auc: float
    add01d_rate: float
    kp_err_m: float = float("nan")
    n_instances: int = 0

    def __post_init__(self):
        for name in ("adds_auc", "add_sym_auc", "add01d_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ValidationError(f"{name} must be a percentage, got {value}")


@dataclass
class EvalReport:
    """Evaluation tables: per-class metrics, segmentation quality and timing"""
    rows: List[ClassRow] = field(default_factory=list)
    miou: float = float("nan")
    timing: TimingBreakdown = field(default_factory=TimingBreakdown)
    distances: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isnan(self.miou) and not 0.0 <= self.miou <= 100.0:
            raise ValidationError(f"miou must be a percentage, got {self.miou}")

    def row(self, class_id) -> ClassRow:
        for row in self.rows:
            if row.class_id == str(class_id):
                return row
        raise KeyError(f"No evaluation row for class {class_id}")
