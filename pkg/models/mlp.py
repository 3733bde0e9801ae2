from dataclasses import dataclass, field
from typing import List

import numpy as np

from models.errors import ValidationError

HIDDEN_ACTIVATION = "relu"


@dataclass
class MlpModel:
    """
    Fully connected network with rectifier hidden layers and one linear
    output layer holding three heads, in this column order:
    semantic logits (num_classes + 1), edge offsets (M * 3), center offset (3).

    Inputs are standardised with input_shift / input_scale before the first
    layer. Parameters are updated in place by the trainer.
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    num_classes: int
    m_edge_points: int
    input_shift: np.ndarray = field(default_factory=lambda: np.zeros(0))
    input_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hidden_activation: str = HIDDEN_ACTIVATION

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("MlpModel needs one bias vector per weight matrix")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != b.shape[0]:
                raise ValidationError(f"Layer {layer}: weight {w.shape} does not match bias {b.shape}")
            if layer and self.weights[layer - 1].shape[1] != w.shape[0]:
                raise ValidationError(f"Layer {layer} input {w.shape[0]} does not chain to "
                                      f"previous output {self.weights[layer - 1].shape[1]}")
        if self.weights[-1].shape[1] != self.output_dim:
            raise ValidationError(f"Output layer has {self.weights[-1].shape[1]} columns, "
                                  f"expected {self.output_dim}")
        if self.hidden_activation != HIDDEN_ACTIVATION:
            raise ValidationError(f"Unsupported hidden activation {self.hidden_activation!r}")

        if self.input_shift.size == 0:
            self.input_shift = np.zeros(self.input_dim)
        if self.input_scale.size == 0:
            self.input_scale = np.ones(self.input_dim)
        self.input_shift = np.array(self.input_shift, dtype=np.float64).reshape(-1)
        self.input_scale = np.array(self.input_scale, dtype=np.float64).reshape(-1)
        if self.input_shift.shape[0] != self.input_dim or self.input_scale.shape[0] != self.input_dim:
            raise ValidationError("Input standardisation does not match the input dimension")
        if np.any(self.input_scale <= 0):
            raise ValidationError("Input scales must be positive")
        if not self.is_finite():
            raise ValidationError("MlpModel parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return (self.num_classes + 1) + 3 * self.m_edge_points + 3

    @property
    def layer_shapes(self) -> List[tuple]:
        return [w.shape for w in self.weights]

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved layer by layer (live references)"""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def copy(self) -> "MlpModel":
        return MlpModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            num_classes=self.num_classes,
            m_edge_points=self.m_edge_points,
            input_shift=self.input_shift.copy(),
            input_scale=self.input_scale.copy(),
        )
