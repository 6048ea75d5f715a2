"""Environment construction, offline data generation and brute-force oracles."""
import json
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from spaars.models.cvae import CvaeModel
from spaars.models.environment import (
    ENV_REGISTRY,
    Environment,
    OfflineDataset,
    OracleResult,
    PointMaze,
    QuadraticBandit,
    Reach1d,
    TabularMdp,
)
from spaars.schemas.env_schemas import DatasetMetadata, EnvSpec
from spaars.services.cvae_service import cvae_service
from spaars.utils.checkpoint import resolve_output
from spaars.utils.errors import ConfigurationError, InputError, UnsupportedError
from spaars.utils.logger import log_info, log_warning

ORACLE_HORIZON_CAP = 50
ORACLE_MAX_POINTS = 200_000_000
ORACLE_CHUNK = 200_000
ORACLE_STATE_POINTS = 201


class EnvService:
    """Toy environments, scripted behaviour policies and exhaustive oracles."""

    def make_env(self, name: str, seed: int = 0, **options) -> Environment:
        """
        Create an environment by name.

        Args:
            name: One of bandit-quadratic, reach-1d, pointmaze-sparse
            seed: Seed of the environment's reset generator
            options: Constructor options (e.g. action_dim for the bandit)

        Raises:
            ConfigurationError: On unknown names or options
        """
        if name not in ENV_REGISTRY:
            raise ConfigurationError(f"Unknown environment '{name}'; expected one of {sorted(ENV_REGISTRY)}")
        try:
            return ENV_REGISTRY[name](seed=seed, **options)
        except TypeError as e:
            raise ConfigurationError(f"Invalid options for environment '{name}': {e}") from e

    # ------------------------------------------------------------------ datasets

    def generate_dataset(
        self, env: Environment, behavior: str, n_pairs: int, seed: int, noise: float = 0.1
    ) -> OfflineDataset:
        """
        Roll out a scripted behaviour policy and keep the visited (s, a) pairs, shuffled.

        Raises:
            InputError: If n_pairs is not positive
        """
        if n_pairs <= 0:
            raise InputError(f"n_pairs must be positive, got {n_pairs}")

        env_seq, policy_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(3)
        env.seed(int(env_seq.generate_state(1)[0]))
        policy_rng = np.random.default_rng(policy_seq)

        states, actions, rewards = [], [], []
        s = env.reset()
        while len(states) < n_pairs:
            a = env.behavior_action(behavior, s, policy_rng, noise)
            s_next, r, done, _ = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(r)
            s = env.reset() if done else s_next

        order = np.random.default_rng(shuffle_seq).permutation(n_pairs)
        metadata = DatasetMetadata(
            env=env.spec.name,
            behavior=behavior,
            noise=noise,
            seed=seed,
            n_pairs=n_pairs,
            state_dim=env.spec.state_dim,
            action_dim=env.spec.action_dim,
            shuffled=True,
        )
        dataset = OfflineDataset(
            states=np.asarray(states)[order],
            actions=np.asarray(actions)[order],
            rewards=np.asarray(rewards)[order],
            metadata=metadata,
        )
        log_info("Dataset generated", env=env.spec.name, behavior=behavior, pairs=n_pairs, seed=seed)
        return dataset

    def save_dataset(self, dataset: OfflineDataset, path: Union[str, Path]) -> Path:
        """CSV table of s*, a*, r columns preceded by one '# {metadata json}' line."""
        path = resolve_output(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = {f"s{i}": dataset.states[:, i] for i in range(dataset.state_dim)}
        columns.update({f"a{i}": dataset.actions[:, i] for i in range(dataset.action_dim)})
        if dataset.rewards is not None:
            columns["r"] = dataset.rewards
        with open(path, "w") as f:
            f.write("# " + dataset.metadata.model_dump_json() + "\n")
            pd.DataFrame(columns).to_csv(f, index=False, float_format="%.17g")
        return path

    def load_dataset(self, path: Union[str, Path], spec: Optional[EnvSpec] = None) -> OfflineDataset:
        """
        Read a dataset file and validate it against an EnvSpec.

        Raises:
            ConfigurationError: Missing file, malformed header or dimension mismatch
            InputError: Dataset without rows
        """
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Dataset file not found: {path}")
        with open(path) as f:
            header = f.readline()
            if not header.startswith("# "):
                raise ConfigurationError(f"Dataset file {path} has no metadata header")
            try:
                metadata = DatasetMetadata.model_validate_json(header[2:])
            except ValueError as e:
                raise ConfigurationError(f"Invalid dataset metadata in {path}: {e}") from e
            frame = pd.read_csv(f)

        if frame.empty:
            raise InputError(f"Dataset {path} contains no pairs")
        state_cols = [f"s{i}" for i in range(metadata.state_dim)]
        action_cols = [f"a{i}" for i in range(metadata.action_dim)]
        missing = [c for c in state_cols + action_cols if c not in frame.columns]
        if missing:
            raise ConfigurationError(f"Dataset {path} is missing columns {missing}")
        if spec is not None and (spec.state_dim != metadata.state_dim or spec.action_dim != metadata.action_dim):
            raise ConfigurationError(
                f"Dataset dims ({metadata.state_dim}, {metadata.action_dim}) do not match "
                f"{spec.name} ({spec.state_dim}, {spec.action_dim})"
            )

        return OfflineDataset(
            states=frame[state_cols].to_numpy(dtype=np.float64),
            actions=frame[action_cols].to_numpy(dtype=np.float64),
            rewards=frame["r"].to_numpy(dtype=np.float64) if "r" in frame.columns else None,
            metadata=metadata,
        )

    def behavior_return(
        self, env_name: str, behavior: str, episodes: int = 10, seed: int = 0, noise: float = 0.1, **options
    ) -> float:
        """Mean undiscounted return of a scripted behaviour policy."""
        env = self.make_env(env_name, seed=seed, **options)
        rng = np.random.default_rng(seed + 1)
        returns = []
        for _ in range(episodes):
            s, total, done = env.reset(), 0.0, False
            while not done:
                s, r, done, _ = env.step(env.behavior_action(behavior, s, rng, noise))
                total += r
            returns.append(total)
        return float(np.mean(returns))

    def sweep_states(self, env: Environment, resolution: int = 4) -> np.ndarray:
        """Fixed state grid for gate sweeps: free maze positions at rest, or an evenly spaced line."""
        if isinstance(env, PointMaze):
            return np.array([np.concatenate([p, np.zeros(2)]) for p in env.free_positions(resolution)])
        if isinstance(env, Reach1d):
            return np.linspace(env.STATE_LOW, env.STATE_HIGH, 101)[:, None]
        return env.initial_state()[None, :]

    # ------------------------------------------------------------------ oracles

    def _grid_axes(self, low: np.ndarray, high: np.ndarray, resolution: int):
        return [np.linspace(lo, hi, resolution) for lo, hi in zip(low, high)]

    def _iter_grid(self, axes, chunk: int = ORACLE_CHUNK):
        """Yield chunks of the Cartesian product of the axes as (m, dim) arrays."""
        sizes = [len(axis) for axis in axes]
        total = int(np.prod(sizes))
        for start in range(0, total, chunk):
            index = np.unravel_index(np.arange(start, min(start + chunk, total)), sizes)
            yield np.stack([axis[i] for axis, i in zip(axes, index)], axis=1)

    def _latent_axes(self, model: CvaeModel, s: np.ndarray, resolution: int, box: float):
        head = cvae_service.prior(model, s)
        return self._grid_axes(head.mean - box * head.std, head.mean + box * head.std, resolution)

    def _check_grid_size(self, resolution: int, dim: int):
        if resolution ** dim > ORACLE_MAX_POINTS:
            raise UnsupportedError(f"Grid of {resolution}^{dim} points is too large for exhaustive search")

    def brute_force_optima(
        self, env: Environment, model: CvaeModel, grid_resolution: int = 41, latent_box: float = 3.0
    ) -> OracleResult:
        """
        Exhaustive optima over raw actions and over decoded latents in a +-latent_box prior-std box.

        Args:
            env: bandit-quadratic or reach-1d
            model: Trained CVAE defining the latent policy class
            grid_resolution: Points per action and latent dimension
            latent_box: Half-width of the latent box in prior standard deviations

        Returns:
            J(pi_a*), J(pi_z*), the maximisers and a Lipschitz estimate of Q* in a

        Raises:
            UnsupportedError: For environments exhaustive search cannot handle
        """
        if grid_resolution < 2:
            raise InputError("grid_resolution must be at least 2")
        if grid_resolution < 50:
            log_warning("Coarse oracle grid", grid_resolution=grid_resolution)
        if env.spec.horizon > ORACLE_HORIZON_CAP:
            raise UnsupportedError(f"Horizon {env.spec.horizon} exceeds the oracle cap {ORACLE_HORIZON_CAP}")
        self._check_grid_size(grid_resolution, env.spec.action_dim)
        self._check_grid_size(grid_resolution, model.latent_dim)

        if isinstance(env, QuadraticBandit):
            result = self._bandit_optima(env, model, grid_resolution, latent_box)
        elif isinstance(env, Reach1d):
            result = self._reach_optima(env, model, grid_resolution, latent_box)
        else:
            raise UnsupportedError(f"No exhaustive oracle for '{env.spec.name}'")

        log_info("Oracle optima", env=env.spec.name, j_raw=result.j_raw, j_latent=result.j_latent,
                 gap=result.exploitation_gap)
        return result

    def _bandit_optima(self, env: QuadraticBandit, model: CvaeModel, resolution: int, box: float) -> OracleResult:
        s = env.initial_state()
        best_raw, a_star = -np.inf, None
        for actions in self._iter_grid(self._grid_axes(env.action_low, env.action_high, resolution)):
            values = env.reward(actions)
            i = int(np.argmax(values))
            if values[i] > best_raw:
                best_raw, a_star = float(values[i]), actions[i]

        best_latent, z_star = -np.inf, None
        for latents in self._iter_grid(self._latent_axes(model, s, resolution, box)):
            decoded = cvae_service.decode(model, latents, np.repeat(s[None, :], len(latents), axis=0))
            values = env.reward(decoded)
            i = int(np.argmax(values))
            if values[i] > best_latent:
                best_latent, z_star = float(values[i]), latents[i]

        return OracleResult(
            j_raw=best_raw, j_latent=best_latent, a_star=a_star, z_star=z_star,
            lipschitz_q=env.q_lipschitz(), states=s[None, :],
        )

    def _reach_optima(self, env: Reach1d, model: CvaeModel, resolution: int, box: float) -> OracleResult:
        states = np.linspace(env.STATE_LOW, env.STATE_HIGH, ORACLE_STATE_POINTS)
        raw_actions = np.linspace(-1.0, 1.0, resolution)
        column = states[:, None]

        # decoded action sets per state grid point
        latent_sets, latent_grids = [], []
        for s in states:
            grid = next(self._iter_grid(self._latent_axes(model, np.array([s]), resolution, box), chunk=10 ** 9))
            latent_grids.append(grid)
            latent_sets.append(cvae_service.decode(model, grid, np.full((len(grid), 1), s))[:, 0])
        latent_actions = np.stack(latent_sets)

        def backward_induction(actions: np.ndarray):
            """actions: (n_states, n_actions) available at each grid state."""
            value = np.zeros(len(states))
            q = None
            for _ in range(env.spec.horizon):
                s_next = np.clip(column + env.GAIN * actions, env.STATE_LOW, env.STATE_HIGH)
                q = -np.abs(s_next - env.GOAL) + env.spec.gamma * np.interp(s_next, states, value)
                value = q.max(axis=1)
            return value, q

        raw_value, raw_q = backward_induction(np.broadcast_to(raw_actions, (len(states), resolution)))
        latent_value, latent_q = backward_induction(latent_actions)

        # initial distribution is uniform on [-1, 0]
        start = (states >= -1.0) & (states <= 0.0)
        slopes = np.abs(np.diff(raw_q, axis=1)) / np.diff(raw_actions)
        best_latent = latent_q.argmax(axis=1)
        return OracleResult(
            j_raw=float(raw_value[start].mean()),
            j_latent=float(latent_value[start].mean()),
            a_star=raw_actions[raw_q.argmax(axis=1)][:, None],
            z_star=np.stack([latent_grids[i][j] for i, j in enumerate(best_latent)]),
            lipschitz_q=float(slopes.max()),
            states=column,
        )

    # ------------------------------------------------------------------ tabular MDP

    def build_tabular_mdp(self, env: Environment, n_states: int = 41, n_actions: int = 21) -> TabularMdp:
        """
        Discretise reach-1d; next states are split linearly between the two nearest grid states.

        Raises:
            UnsupportedError: For environments other than reach-1d
        """
        if not isinstance(env, Reach1d):
            raise UnsupportedError(f"Tabular discretisation is only available for reach-1d, not '{env.spec.name}'")
        states = np.linspace(env.STATE_LOW, env.STATE_HIGH, n_states)
        actions = np.linspace(-1.0, 1.0, n_actions)
        spacing = states[1] - states[0]

        transitions = np.zeros((n_states, n_actions, n_states))
        rewards = np.zeros((n_states, n_actions))
        for i, s in enumerate(states):
            for j, a in enumerate(actions):
                s_next = float(np.clip(s + env.GAIN * a, env.STATE_LOW, env.STATE_HIGH))
                rewards[i, j] = -abs(s_next - env.GOAL)
                position = min((s_next - env.STATE_LOW) / spacing, n_states - 1.0)
                lower = min(int(np.floor(position)), n_states - 1)
                weight = position - lower
                transitions[i, j, lower] += 1.0 - weight
                if weight > 0.0 and lower + 1 < n_states:
                    transitions[i, j, lower + 1] += weight
        return TabularMdp(states=states, actions=actions, transitions=transitions, rewards=rewards, gamma=env.spec.gamma)

    def value_iteration(self, mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 10_000) -> Tuple[np.ndarray, np.ndarray]:
        """Optimal (V*, Q*) of a tabular MDP."""
        value = np.zeros(mdp.n_states)
        for _ in range(max_iter):
            q = mdp.rewards + mdp.gamma * mdp.transitions @ value
            updated = q.max(axis=1)
            if np.max(np.abs(updated - value)) < tol:
                value = updated
                break
            value = updated
        return value, mdp.rewards + mdp.gamma * mdp.transitions @ value

    def evaluate_tabular_policy(self, mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
        """
        Exact value of a policy by solving (I - gamma P_pi) V = r_pi.

        Args:
            policy: (n_states,) action indices or (n_states, n_actions) probabilities
        """
        policy = np.asarray(policy)
        if policy.ndim == 1:
            probs = np.zeros((mdp.n_states, mdp.n_actions))
            probs[np.arange(mdp.n_states), policy.astype(int)] = 1.0
        else:
            probs = policy
        p_pi = np.einsum("sa,sat->st", probs, mdp.transitions)
        r_pi = np.sum(probs * mdp.rewards, axis=1)
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


# Singleton instance
env_service = EnvService()
