"""Parameter containers for the multilayer perceptrons and their optimizer."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from spaars.utils.errors import ConfigurationError, NumericError

ACTIVATIONS = ("tanh", "relu", "identity")

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class MlpParams:
    """Fixed-architecture MLP: weights are (in, out) matrices, one activation per layer."""

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str]

    def __post_init__(self):
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1 or any(int(size) <= 0 for size in self.layer_sizes):
            raise ConfigurationError(f"Invalid layer sizes: {self.layer_sizes}")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise ConfigurationError("Weights, biases and activations must have one entry per layer")

        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ConfigurationError(
                    f"Layer {i} has weight {w.shape} / bias {b.shape}, expected {expected}"
                )
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"Unknown activation '{act}'")
        self.check_finite()

    def check_finite(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"Layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
        )


@dataclass
class ParamGrads:
    """Gradients shaped like an MlpParams."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class ForwardCache:
    """Per-layer inputs and post-activations recorded by a forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


@dataclass
class OptimizerState:
    """First/second moment accumulators of the adaptive optimizer."""

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class GaussianHead:
    """Diagonal Gaussian; log_std is kept inside [LOG_STD_MIN, LOG_STD_MAX]."""

    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]
