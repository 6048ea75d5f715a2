"""Toy continuous-control environments and the containers they produce."""
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from spaars.schemas.env_schemas import DatasetMetadata, EnvSpec
from spaars.utils.errors import ConfigurationError, InputError

TRANSITION_SOURCES = ("latent", "raw", "blend", "dataset")

MEDIUM_SCALE = 0.6
RANDOM_SAFE_SCALE = 0.5


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r_ext: float
    s_next: np.ndarray
    done: bool
    r_int: float = 0.0
    source: str = "dataset"
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.source not in TRANSITION_SOURCES:
            raise ConfigurationError(f"Unknown transition source '{self.source}'")


@dataclass
class OfflineDataset:
    """Unordered (s, a) pairs; rows carry no trajectory order once shuffled."""

    states: np.ndarray
    actions: np.ndarray
    metadata: DatasetMetadata
    rewards: Optional[np.ndarray] = None

    @property
    def n_pairs(self) -> int:
        return int(self.states.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def action_dim(self) -> int:
        return int(self.actions.shape[1])


@dataclass
class OracleResult:
    """Exhaustive-search optima over raw actions and over the decoded latent box."""

    j_raw: float
    j_latent: float
    a_star: np.ndarray
    z_star: np.ndarray
    lipschitz_q: float
    states: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))

    @property
    def exploitation_gap(self) -> float:
        return self.j_raw - self.j_latent


@dataclass
class TabularMdp:
    """Finite discounted MDP with stochastic transition tensor P[s, a, s']."""

    states: np.ndarray
    actions: np.ndarray
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


class Environment:
    """Base class: reset/step contract plus a pure transition function for oracles."""

    spec: EnvSpec

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.state: Optional[np.ndarray] = None
        self.t = 0

    @property
    def action_low(self) -> np.ndarray:
        return np.asarray(self.spec.action_low, dtype=np.float64)

    @property
    def action_high(self) -> np.ndarray:
        return np.asarray(self.spec.action_high, dtype=np.float64)

    @property
    def action_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.action_low, self.action_high

    def seed(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def clip_action(self, a: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(a, dtype=np.float64), self.action_low, self.action_high)

    def initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def transition(self, s: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        """Pure dynamics: (s_next, reward, terminal)."""
        raise NotImplementedError

    def expert_action(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> np.ndarray:
        self.t = 0
        self.state = self.initial_state()
        return self.state.copy()

    def step(self, a: np.ndarray) -> Tuple[np.ndarray, float, bool, Dict]:
        if self.state is None:
            raise InputError("step() called before reset()")
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.spec.action_dim,):
            raise ConfigurationError(f"Action shape {a.shape} != ({self.spec.action_dim},)")
        s_next, reward, terminal = self.transition(self.state, self.clip_action(a))
        self.t += 1
        truncated = self.t >= self.spec.horizon
        self.state = s_next
        return s_next.copy(), reward, terminal or truncated, {"terminal": terminal, "truncated": truncated}

    def behavior_action(self, behavior: str, s: np.ndarray, rng: np.random.Generator, noise: float = 0.1) -> np.ndarray:
        """Scripted behavioural policies used to generate offline data."""
        low, high = self.action_low, self.action_high
        if behavior == "expert_noisy":
            a = self.expert_action(s) + noise * rng.standard_normal(self.spec.action_dim)
        elif behavior == "medium":
            capped = np.clip(MEDIUM_SCALE * self.expert_action(s), MEDIUM_SCALE * low, MEDIUM_SCALE * high)
            a = capped + noise * rng.standard_normal(self.spec.action_dim)
        elif behavior == "random_safe":
            center, half = 0.5 * (high + low), 0.5 * (high - low)
            a = center + RANDOM_SAFE_SCALE * half * rng.uniform(-1.0, 1.0, self.spec.action_dim)
        else:
            raise ConfigurationError(f"Unknown behaviour '{behavior}'")
        return np.clip(a, low, high)


class QuadraticBandit(Environment):
    """Single state, horizon 1, reward -||a - a*||^2."""

    OPTIMUM_PATTERN = (0.5, -0.5, 0.5, -0.5)

    def __init__(self, seed: int = 0, action_dim: int = 4):
        super().__init__(seed)
        if action_dim < 1:
            raise ConfigurationError("Bandit action_dim must be positive")
        self.spec = EnvSpec(
            name="bandit-quadratic",
            state_dim=1,
            action_dim=action_dim,
            action_low=[-1.0] * action_dim,
            action_high=[1.0] * action_dim,
            gamma=0.99,
            horizon=1,
            reward_kind="quadratic_bandit",
        )
        self.a_star = np.array([self.OPTIMUM_PATTERN[i % 4] for i in range(action_dim)], dtype=np.float64)

    def initial_state(self) -> np.ndarray:
        return np.ones(1)

    def reward(self, a: np.ndarray) -> np.ndarray:
        return -np.sum((np.asarray(a, dtype=np.float64) - self.a_star) ** 2, axis=-1)

    def q_star(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        # one-step episodes: Q* is the reward itself
        return self.reward(a)

    def q_star_grad(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return -2.0 * (np.asarray(a, dtype=np.float64) - self.a_star)

    def q_lipschitz(self) -> float:
        """sup over the action box of ||grad_a Q*||."""
        reach = np.maximum(np.abs(self.action_low - self.a_star), np.abs(self.action_high - self.a_star))
        return float(2.0 * np.linalg.norm(reach))

    def transition(self, s, a):
        return np.asarray(s, dtype=np.float64).copy(), float(self.reward(a)), True

    def expert_action(self, s) -> np.ndarray:
        return self.a_star.copy()


class Reach1d(Environment):
    """Point on a line steered toward a goal with shaped reward -|s' - g|."""

    STATE_LOW, STATE_HIGH = -2.0, 2.0
    GOAL = 1.0
    GAIN = 0.25

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.spec = EnvSpec(
            name="reach-1d",
            state_dim=1,
            action_dim=1,
            action_low=[-1.0],
            action_high=[1.0],
            gamma=0.9,
            horizon=20,
            reward_kind="shaped",
        )

    def initial_state(self) -> np.ndarray:
        return np.array([self.rng.uniform(-1.0, 0.0)])

    def next_state(self, s, a) -> np.ndarray:
        return np.clip(np.asarray(s, dtype=np.float64) + self.GAIN * np.asarray(a, dtype=np.float64),
                       self.STATE_LOW, self.STATE_HIGH)

    def transition(self, s, a):
        s_next = self.next_state(s, a)
        return s_next, float(-abs(s_next[0] - self.GOAL)), False

    def expert_action(self, s) -> np.ndarray:
        return np.clip((self.GOAL - np.asarray(s, dtype=np.float64)) / self.GAIN, -1.0, 1.0)


class PointMaze(Environment):
    """Damped point mass in a 5x5 cell maze with a sparse goal reward.

    State is (x, y, vx, vy) with x along columns and y along rows; a move whose end point
    lies in a wall cell or outside the maze is blocked (position kept, velocity zeroed).
    """

    LAYOUT = ("S..#.", "##.#.", ".....", ".###.", "....G")
    DT = 0.5
    DAMPING = 0.9
    MAX_SPEED = 1.0
    GOAL_RADIUS = 0.5
    START_JITTER = 0.05

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.spec = EnvSpec(
            name="pointmaze-sparse",
            state_dim=4,
            action_dim=2,
            action_low=[-1.0, -1.0],
            action_high=[1.0, 1.0],
            gamma=0.99,
            horizon=100,
            reward_kind="sparse_goal",
        )
        self.n_rows, self.n_cols = len(self.LAYOUT), len(self.LAYOUT[0])
        self.walls = np.array([[ch == "#" for ch in row] for row in self.LAYOUT])
        self.start_cell = self._find("S")
        self.goal_cell = self._find("G")
        self.goal = np.array([self.goal_cell[1] + 0.5, self.goal_cell[0] + 0.5])
        self._next_cell = self._shortest_path_successors()

    def _find(self, ch: str) -> Tuple[int, int]:
        for r, row in enumerate(self.LAYOUT):
            if ch in row:
                return r, row.index(ch)
        raise ConfigurationError(f"Maze layout has no '{ch}' cell")

    def _shortest_path_successors(self) -> Dict[Tuple[int, int], Tuple[int, int]]:
        """BFS from the goal: each open cell maps to its neighbour one step closer."""
        successor = {self.goal_cell: self.goal_cell}
        frontier = deque([self.goal_cell])
        while frontier:
            r, c = frontier.popleft()
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nr, nc = r + dr, c + dc
                if self.is_open_cell(nr, nc) and (nr, nc) not in successor:
                    successor[(nr, nc)] = (r, c)
                    frontier.append((nr, nc))
        return successor

    def is_open_cell(self, row: int, col: int) -> bool:
        return 0 <= row < self.n_rows and 0 <= col < self.n_cols and not self.walls[row, col]

    def cell_of(self, position: np.ndarray) -> Tuple[int, int]:
        return int(np.floor(position[1])), int(np.floor(position[0]))

    def is_free(self, position: np.ndarray) -> bool:
        x, y = position
        if not (0.0 <= x < self.n_cols and 0.0 <= y < self.n_rows):
            return False
        return self.is_open_cell(*self.cell_of(position))

    def initial_state(self) -> np.ndarray:
        start = np.array([self.start_cell[1] + 0.5, self.start_cell[0] + 0.5])
        start += self.rng.uniform(-self.START_JITTER, self.START_JITTER, 2)
        return np.concatenate([start, np.zeros(2)])

    def transition(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        position, velocity = s[:2], s[2:]
        velocity_next = np.clip(self.DAMPING * velocity + self.DT * np.asarray(a), -self.MAX_SPEED, self.MAX_SPEED)
        position_next = position + self.DT * velocity_next
        # axis-aligned intermediate points stop the mass from cutting wall corners
        corner_x = np.array([position_next[0], position[1]])
        corner_y = np.array([position[0], position_next[1]])
        if not (self.is_free(position_next) and self.is_free(corner_x) and self.is_free(corner_y)):
            position_next, velocity_next = position.copy(), np.zeros(2)

        at_goal = bool(np.linalg.norm(position_next - self.goal) <= self.GOAL_RADIUS)
        return np.concatenate([position_next, velocity_next]), float(at_goal), at_goal

    def expert_action(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        position, velocity = s[:2], s[2:]
        cell = self.cell_of(position)
        target_cell = self._next_cell.get(cell, self.goal_cell)
        waypoint = np.array([target_cell[1] + 0.5, target_cell[0] + 0.5])
        return np.clip(2.0 * (waypoint - position) - velocity, -1.0, 1.0)

    def free_positions(self, resolution: int) -> List[np.ndarray]:
        """Grid of free positions, resolution points per cell side."""
        xs = (np.arange(self.n_cols * resolution) + 0.5) / resolution
        ys = (np.arange(self.n_rows * resolution) + 0.5) / resolution
        return [np.array([x, y]) for y in ys for x in xs if self.is_free(np.array([x, y]))]


ENV_REGISTRY = {
    "bandit-quadratic": QuadraticBandit,
    "reach-1d": Reach1d,
    "pointmaze-sparse": PointMaze,
}
