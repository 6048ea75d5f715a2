"""Conditional VAE parameter bundle."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from spaars.models.network import MlpParams


@dataclass
class CvaeModel:
    """Encoder q(z|s,a), decoder Dec(z,s) and learned prior p(z|s).

    Networks see normalised inputs: states through (s - state_shift) / state_scale and
    actions through their position inside the action box. The encoder emits
    [mean, raw log-std] over R^k, the prior the same from s alone, and the decoder a
    pre-squash vector mapped into the action bounds with tanh.
    """

    encoder: MlpParams
    decoder: MlpParams
    prior: MlpParams
    state_dim: int
    action_dim: int
    latent_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    state_shift: np.ndarray
    state_scale: np.ndarray
    use_mean_batchnorm: bool = True
    bn_mean: Optional[np.ndarray] = None
    bn_var: Optional[np.ndarray] = None
    frozen: bool = False
    fingerprint: Optional[str] = None

    @property
    def action_center(self) -> np.ndarray:
        return 0.5 * (self.action_high + self.action_low)

    @property
    def action_half_range(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)
