"""Actors, the shared critic ensemble, replay storage and the RND pair."""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence

import numpy as np
from sklearn.preprocessing import StandardScaler

from spaars.models.network import MlpParams, OptimizerState
from spaars.services.network_service import network_service
from spaars.utils.errors import ConfigurationError

SOURCE_CODES = {"dataset": 0, "latent": 1, "raw": 2, "blend": 3}


@dataclass
class StateScaler:
    """Fixed affine state normalisation shared by every network of a run."""

    shift: np.ndarray
    scale: np.ndarray

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.shift) / self.scale


class ActionValue(Protocol):
    """Anything that scores raw actions member by member."""

    def member_values(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """(K, n) values."""

    def member_action_grads(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """(K, n, d) gradients with respect to the action."""


@dataclass
class CriticEnsemble:
    """K members Q_k(s, a) with polyak-averaged target copies."""

    members: List[MlpParams]
    targets: List[MlpParams]
    optimizers: List[OptimizerState]
    scaler: StateScaler
    state_dim: int
    action_dim: int
    polyak: float = 0.995
    num_min_qs: int = 2

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigurationError("A critic ensemble needs at least two members")

    @property
    def size(self) -> int:
        return len(self.members)

    def _inputs(self, s, a) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim:
            raise ConfigurationError(
                f"Critic expects state/action dims ({self.state_dim}, {self.action_dim}), got ({s.shape[1]}, {a.shape[1]})"
            )
        return np.concatenate([self.scaler(s), a], axis=1)

    def member_values(self, s, a, target: bool = False) -> np.ndarray:
        inputs = self._inputs(s, a)
        nets = self.targets if target else self.members
        return np.stack([network_service.forward(net, inputs)[:, 0] for net in nets])

    def member_action_grads(self, s, a) -> np.ndarray:
        inputs = self._inputs(s, a)
        grads = []
        for net in self.members:
            out, cache = network_service.forward_cached(net, inputs)
            _, grad_inputs = network_service.backward(net, cache, np.ones_like(out))
            grads.append(grad_inputs[:, self.state_dim:])
        return np.stack(grads)


@dataclass
class FunctionCritic:
    """Members given in closed form, e.g. the bandit's Q* or hand-set test critics."""

    value_fns: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    grad_fns: Optional[Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]] = None

    @property
    def size(self) -> int:
        return len(self.value_fns)

    def member_values(self, s, a) -> np.ndarray:
        s, a = np.atleast_2d(s), np.atleast_2d(a)
        return np.stack([np.broadcast_to(np.asarray(fn(s, a), dtype=np.float64), (a.shape[0],)) for fn in self.value_fns])

    def member_action_grads(self, s, a) -> np.ndarray:
        if self.grad_fns is None:
            raise ConfigurationError("This critic has no action gradients")
        s, a = np.atleast_2d(s), np.atleast_2d(a)
        return np.stack([np.broadcast_to(np.asarray(fn(s, a), dtype=np.float64), a.shape) for fn in self.grad_fns])


@dataclass
class TabularCritic:
    """Q tables over a 1-D state grid and action grid, looked up at the nearest node."""

    states: np.ndarray
    actions: np.ndarray
    tables: np.ndarray

    @property
    def size(self) -> int:
        return self.tables.shape[0]

    def _nearest(self, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(values, dtype=np.float64).reshape(-1, 1) - grid[None, :]).argmin(axis=1)

    def member_values(self, s, a) -> np.ndarray:
        return self.tables[:, self._nearest(self.states, s), self._nearest(self.actions, a)]

    def member_action_grads(self, s, a) -> np.ndarray:
        raise ConfigurationError("Tabular critics have no action gradients")


@dataclass
class LatentActor:
    """pi_z: s -> Gaussian over the latent space, unsquashed."""

    net: MlpParams
    scaler: StateScaler
    optimizer: OptimizerState
    log_temperature: np.ndarray
    temperature_optimizer: OptimizerState
    latent_dim: int
    target_entropy: float

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature[0]))


@dataclass
class RawActor:
    """pi_raw: s -> Gaussian pushed through tanh into the action bounds."""

    net: MlpParams
    scaler: StateScaler
    optimizer: OptimizerState
    bc_optimizer: OptimizerState
    log_temperature: np.ndarray
    temperature_optimizer: OptimizerState
    action_low: np.ndarray
    action_high: np.ndarray
    target_entropy: float

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature[0]))

    @property
    def action_center(self) -> np.ndarray:
        return 0.5 * (self.action_high + self.action_low)

    @property
    def action_half_range(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)

    @property
    def action_dim(self) -> int:
        return int(self.action_low.shape[0])


@dataclass
class RndPair:
    """Frozen random target, trainable predictor and the running normalisers."""

    target: MlpParams
    predictor: MlpParams
    optimizer: OptimizerState
    input_scaler: StandardScaler = field(default_factory=StandardScaler)
    reward_scaler: StandardScaler = field(default_factory=lambda: StandardScaler(with_mean=False))
    ema_episodic: Optional[float] = None
    input_clip: float = 5.0
    target_fingerprint: Optional[str] = None


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    z: np.ndarray
    r_ext: np.ndarray
    r_int: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return int(self.s.shape[0])


@dataclass
class ReplayBuffer:
    """Fixed-capacity FIFO ring over preallocated arrays."""

    capacity: int
    states: np.ndarray
    actions: np.ndarray
    latents: np.ndarray
    r_ext: np.ndarray
    r_int: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    sources: np.ndarray
    cursor: int = 0
    size: int = 0

    @classmethod
    def empty(cls, capacity: int, state_dim: int, action_dim: int, latent_dim: int) -> "ReplayBuffer":
        return cls(
            capacity=capacity,
            states=np.zeros((capacity, state_dim)),
            actions=np.zeros((capacity, action_dim)),
            latents=np.zeros((capacity, latent_dim)),
            r_ext=np.zeros(capacity),
            r_int=np.zeros(capacity),
            next_states=np.zeros((capacity, state_dim)),
            dones=np.zeros(capacity),
            sources=np.zeros(capacity, dtype=np.int64),
        )


@dataclass
class LearnerBundle:
    """All trainable state of a run that lives next to the frozen CVAE."""

    latent_actor: LatentActor
    raw_actor: RawActor
    critic: CriticEnsemble
    rnd: RndPair
    buffer: ReplayBuffer
    scaler: StateScaler
