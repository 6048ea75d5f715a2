"""Phase machine, alpha schedule, action blending, plateau detection and the advantage gate."""
import copy
import json
import platform
from importlib import metadata
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from spaars.models.curriculum import ActionChoice, CurriculumState, PlateauTracker, TrainingResult
from spaars.models.cvae import CvaeModel
from spaars.models.environment import Environment, OfflineDataset, Transition
from spaars.models.learners import ActionValue, CriticEnsemble, LatentActor, LearnerBundle, RawActor
from spaars.schemas.curriculum_schemas import CurriculumConfig, GateConfig, GateDecision, MetricsRecord
from spaars.schemas.run_schemas import RunConfig
from spaars.services.cvae_service import cvae_service
from spaars.services.rl_service import rl_service
from spaars.utils.checkpoint import load_payload, resolve_output, save_payload
from spaars.utils.errors import ConfigurationError, InputError
from spaars.utils.logger import log_info
from spaars.utils.metrics import MetricsWriter

VERSIONED_PACKAGES = ("numpy", "pandas", "pydantic", "joblib", "scikit-learn", "matplotlib")


class CurriculumService:
    """Runs training through latent exploration, then the blended transition or the gate."""

    def new_state(self, config: CurriculumConfig, horizon: int, total_steps: int) -> CurriculumState:
        plateau = config.plateau
        warmup = config.gate.warmup_steps
        if warmup is None:
            warmup = 2 * plateau.window * horizon
        return CurriculumState(
            variant=config.variant,
            phase="LatentExploration",
            plateau=PlateauTracker(window=plateau.window, tau=plateau.tau, ema_decay=plateau.ema_decay),
            ramp_steps=config.ramp_steps or max(1, total_steps // 4),
            warmup_steps=warmup,
            phase_history=["LatentExploration"],
        )

    # ------------------------------------------------------------------ schedule

    def plateau_detect(self, tracker: PlateauTracker, r_int_episode: float) -> Tuple[PlateauTracker, bool]:
        """
        Feed one episode's intrinsic reward; plateaued when the EMA changed by less than tau
        (relative) over the last window episodes.

        A zero EMA at the start of the window counts as plateaued only if the EMA is still zero.
        """
        if tracker.ema is None:
            tracker.ema = float(r_int_episode)
        else:
            tracker.ema = tracker.ema_decay * tracker.ema + (1.0 - tracker.ema_decay) * float(r_int_episode)
        tracker.history.append(tracker.ema)
        if len(tracker.history) > tracker.window + 1:
            del tracker.history[0]
        tracker.episodes += 1

        if len(tracker.history) < tracker.window + 1:
            tracker.plateaued = False
        else:
            previous, current = tracker.history[0], tracker.history[-1]
            if previous == 0.0:
                tracker.plateaued = current == 0.0
            else:
                tracker.plateaued = abs(current - previous) / abs(previous) < tracker.tau
        return tracker, tracker.plateaued

    def alpha_schedule(self, state: CurriculumState, step: int) -> float:
        """Linear ramp from the step the Transition phase started."""
        if state.phase == "RawExploitation":
            return 1.0
        if state.transition_start is None:
            return 0.0
        return float(np.clip((step - state.transition_start) / state.ramp_steps, 0.0, 1.0))

    def blend(
        self,
        a_z: np.ndarray,
        a_raw: np.ndarray,
        alpha: float,
        low: Optional[np.ndarray] = None,
        high: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        (1 - alpha) a_z + alpha a_raw, clipped to the bounds when given.

        Raises:
            InputError: If alpha is outside [0, 1]
        """
        if not 0.0 <= alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {alpha}")
        a_z = np.asarray(a_z, dtype=np.float64)
        a_raw = np.asarray(a_raw, dtype=np.float64)
        if a_z.shape != a_raw.shape:
            raise ConfigurationError(f"Cannot blend actions of shapes {a_z.shape} and {a_raw.shape}")
        if alpha == 0.0:
            mixed = a_z.copy()
        elif alpha == 1.0:
            mixed = a_raw.copy()
        else:
            mixed = (1.0 - alpha) * a_z + alpha * a_raw
        if low is not None and high is not None:
            mixed = np.clip(mixed, low, high)
        return mixed

    def phase_step(
        self, state: CurriculumState, plateaued: bool, l_bc: Optional[float], config: CurriculumConfig, step: int
    ) -> CurriculumState:
        """Advance the phase machine by one environment step."""
        state.env_step = step
        if l_bc is not None:
            state.last_l_bc = l_bc

        if state.phase == "LatentExploration" and state.variant != "latent_only":
            competent = state.last_l_bc is not None and state.last_l_bc < config.eps_bc
            if plateaued and competent:
                if state.variant == "schedule":
                    state.phase = "Transition"
                    state.transition_start = step
                else:
                    state.phase = "GateActive"
                state.phase_history.append(state.phase)
                log_info("Phase change", phase=state.phase, step=step, l_bc=state.last_l_bc)
        elif state.phase == "Transition":
            state.alpha = self.alpha_schedule(state, step)
            if state.alpha >= 1.0:
                state.phase = "RawExploitation"
                state.alpha = 1.0
                state.phase_history.append(state.phase)
                log_info("Phase change", phase=state.phase, step=step)
        return state

    # ------------------------------------------------------------------ gate

    def gate_statistics(self, critic: ActionValue, s, a_z, a_raw) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Q_raw mean, Q_z mean, sigma_raw) per state row."""
        q_raw, sigma_raw = rl_service.ensemble_stats(critic, s, a_raw)
        q_z, _ = rl_service.ensemble_stats(critic, s, a_z)
        return q_raw, q_z, sigma_raw

    def gate_decide(
        self,
        s: np.ndarray,
        a_z: np.ndarray,
        a_raw: np.ndarray,
        critic: ActionValue,
        config: GateConfig,
        step: int,
        state: Optional[CurriculumState] = None,
        commit: bool = True,
    ) -> GateDecision:
        """
        Choose the raw policy iff the mean advantage exceeds the margin and members agree.

        With a CurriculumState, fired or refused decisions are held for the commitment
        length; the warmup lockout is never held.
        """
        if commit and state is not None and state.commitment_left > 0 and state.held_decision is not None:
            state.commitment_left -= 1
            return state.held_decision

        q_raw, q_z, sigma = (float(v[0]) for v in self.gate_statistics(critic, s, a_z, a_raw))
        warmup = config.warmup_steps
        if warmup is None:
            warmup = state.warmup_steps if state is not None else 0

        if step < warmup:
            return GateDecision(mode="latent", q_raw_mean=q_raw, q_z_mean=q_z, sigma_raw=sigma, reason="warmup")
        if q_raw - q_z <= config.margin:
            mode, reason = "latent", "margin_fail"
        elif sigma >= config.sigma_max:
            mode, reason = "latent", "disagreement"
        else:
            mode, reason = "raw", "fired"
        decision = GateDecision(mode=mode, q_raw_mean=q_raw, q_z_mean=q_z, sigma_raw=sigma, reason=reason)
        if commit and state is not None and config.commitment > 1:
            state.held_decision = decision
            state.commitment_left = config.commitment - 1
        return decision

    def activation_set(
        self,
        states: np.ndarray,
        model: CvaeModel,
        latent_actor: LatentActor,
        raw_actor: RawActor,
        critic: ActionValue,
        config: GateConfig,
    ) -> np.ndarray:
        """Boolean mask of the states where the gate fires under the deterministic policies."""
        states = np.atleast_2d(states)
        a_z = cvae_service.decode(model, rl_service.latent_actor_mean(latent_actor, states), states)
        a_raw = rl_service.raw_actor_mean(raw_actor, states)
        q_raw, q_z, sigma = self.gate_statistics(critic, states, a_z, a_raw)
        return (q_raw - q_z > config.margin) & (sigma < config.sigma_max)

    # ------------------------------------------------------------------ acting

    def act(
        self,
        bundle: LearnerBundle,
        model: CvaeModel,
        state: CurriculumState,
        config: CurriculumConfig,
        s: np.ndarray,
        step: int,
        rng: Optional[np.random.Generator] = None,
        commit: bool = True,
    ) -> ActionChoice:
        """Behaviour action for the current phase; deterministic means when rng is None."""
        if rng is None:
            z = rl_service.latent_actor_mean(bundle.latent_actor, s)
            a_raw = rl_service.raw_actor_mean(bundle.raw_actor, s)
        else:
            z, _ = rl_service.sample_latent(bundle.latent_actor, s, rng)
            a_raw, _ = rl_service.sample_raw_action(bundle.raw_actor, s, rng)

        if state.phase == "RawExploitation":
            return ActionChoice(action=a_raw, z=z, source="raw", alpha=1.0)

        a_z = cvae_service.decode(model, z, s)
        if state.phase == "LatentExploration":
            return ActionChoice(action=a_z, z=z, source="latent", alpha=None if state.variant == "gate" else 0.0)
        if state.phase == "Transition":
            alpha = self.alpha_schedule(state, step)
            mixed = self.blend(a_z, a_raw, alpha, model.action_low, model.action_high)
            return ActionChoice(action=mixed, z=z, source="blend", alpha=alpha)

        decision = self.gate_decide(s, a_z, a_raw, bundle.critic, config.gate, step, state, commit=commit)
        if decision.mode == "raw":
            return ActionChoice(action=a_raw, z=z, source="raw", decision=decision)
        return ActionChoice(action=a_z, z=z, source="latent", decision=decision)

    def evaluate_policy(
        self,
        bundle: LearnerBundle,
        model: CvaeModel,
        env: Environment,
        state: CurriculumState,
        config: CurriculumConfig,
        episodes: int,
        seed: int,
    ) -> float:
        """Mean undiscounted return of the deterministic behaviour policy on a copied env."""
        eval_env = copy.deepcopy(env)
        eval_env.seed(seed)
        returns = []
        for _ in range(episodes):
            s, total, done = eval_env.reset(), 0.0, False
            while not done:
                choice = self.act(bundle, model, state, config, s, state.env_step, rng=None, commit=False)
                s, r, done, _ = eval_env.step(choice.action)
                total += r
            returns.append(total)
        return float(np.mean(returns))

    # ------------------------------------------------------------------ training

    def _learn(
        self, bundle: LearnerBundle, model: CvaeModel, state: CurriculumState, config: RunConfig,
        gamma: float, rng: np.random.Generator,
    ) -> Optional[float]:
        """One gradient round for the phase; returns L_BC when behavioural cloning ran."""
        learner = config.learner
        batch = rl_service.buffer_sample(bundle.buffer, learner.batch_size, rng)
        latent_phase = state.phase == "LatentExploration"

        if latent_phase:
            def next_action(s_next):
                z_next, log_prob = rl_service.sample_latent(bundle.latent_actor, s_next, rng)
                return cvae_service.decode(model, z_next, s_next), log_prob
            temperature, weight = bundle.latent_actor.temperature, learner.intrinsic_weight
        else:
            def next_action(s_next):
                return rl_service.sample_raw_action(bundle.raw_actor, s_next, rng)
            temperature, weight = bundle.raw_actor.temperature, 0.0
        rl_service.critic_update(bundle.critic, batch, next_action, gamma, temperature, rng, weight)

        l_bc = None
        if latent_phase or state.phase == "GateActive":
            _, log_prob = rl_service.latent_actor_update(bundle.latent_actor, model, bundle.critic, batch, rng)
            if learner.auto_temperature:
                rl_service.temperature_update(bundle.latent_actor, log_prob)
        if latent_phase:
            l_bc = rl_service.raw_actor_bc_update(bundle.raw_actor, batch)
            rl_service.rnd_update(bundle.rnd, batch)
        else:
            _, log_prob = rl_service.raw_actor_sac_update(bundle.raw_actor, bundle.critic, batch, rng)
            if learner.auto_temperature:
                rl_service.temperature_update(bundle.raw_actor, log_prob)
        return l_bc

    def _write_run_header(self, config: RunConfig, run_dir: Path):
        (run_dir / "config.json").write_text(config.model_dump_json(indent=2))
        versions = {"python": platform.python_version()}
        for package in VERSIONED_PACKAGES:
            try:
                versions[package] = metadata.version(package)
            except metadata.PackageNotFoundError:
                versions[package] = None
        (run_dir / "versions.json").write_text(json.dumps(versions, indent=2))

    def save_policy_snapshot(
        self, path: Path, bundle: LearnerBundle, model: CvaeModel, state: CurriculumState, config: RunConfig
    ) -> Path:
        """Everything needed to act and to sweep the gate, without replay or RND state."""
        return save_payload(
            path,
            "policy_snapshot",
            {
                "step": state.env_step,
                "model": model,
                "latent_actor": copy.deepcopy(bundle.latent_actor),
                "raw_actor": copy.deepcopy(bundle.raw_actor),
                "critic": copy.deepcopy(bundle.critic),
                "state": copy.deepcopy(state),
                "config": config.model_dump(),
            },
        )

    def load_policy_snapshot(self, path) -> dict:
        payload = load_payload(path, "policy_snapshot")
        payload["config"] = RunConfig.model_validate(payload["config"])
        return payload

    def run_training(
        self,
        config: RunConfig,
        env: Environment,
        dataset: OfflineDataset,
        model: Optional[CvaeModel] = None,
        resume: bool = False,
    ) -> TrainingResult:
        """
        Train both policies through the curriculum and stream metrics.

        Args:
            config: Validated run configuration
            env: Environment instance matching the dataset
            dataset: Offline (s, a) pairs
            model: Pretrained CVAE; trained inline (phase CvaePretrain) when None
            resume: Continue from <run_dir>/checkpoints/latest.joblib

        Returns:
            The run directory, final state, learners and evaluation returns

        Raises:
            ConfigurationError: Env/dataset dimension mismatch, or nothing to resume
        """
        if dataset.state_dim != env.spec.state_dim or dataset.action_dim != env.spec.action_dim:
            raise ConfigurationError(
                f"Dataset dims ({dataset.state_dim}, {dataset.action_dim}) do not match "
                f"{env.spec.name} ({env.spec.state_dim}, {env.spec.action_dim})"
            )
        run_dir = resolve_output(config.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = run_dir / "checkpoints" / "latest.joblib"
        metrics_path = run_dir / "metrics.jsonl"
        seed = config.seed
        gamma = env.spec.gamma

        if resume:
            if not checkpoint_path.exists():
                raise ConfigurationError(f"No checkpoint to resume from at {checkpoint_path}")
            checkpoint = load_payload(checkpoint_path, "training_checkpoint")
            model = checkpoint["model"]
            bundle: LearnerBundle = checkpoint["bundle"]
            state: CurriculumState = checkpoint["state"]
            env = checkpoint["env"]
            act_rng, update_rng = checkpoint["act_rng"], checkpoint["update_rng"]
            s, episode_r_int = checkpoint["s"], checkpoint["episode_r_int"]
            start, eval_returns = checkpoint["step"], checkpoint["eval_returns"]
            writer = MetricsWriter(metrics_path, truncate_at=checkpoint["metrics_offset"])
            log_info("Resuming training", run_dir=str(run_dir), step=start)
        else:
            self._write_run_header(config, run_dir)
            writer = MetricsWriter(metrics_path)
            init_seq, act_seq, update_seq, env_seq = np.random.SeedSequence(seed).spawn(4)
            if model is None:
                writer.write(MetricsRecord(kind="phase", step=0, seed=seed, phase="CvaePretrain"))
                model, _ = cvae_service.train_cvae(
                    dataset, config.cvae, seed, action_bounds=env.action_bounds
                )
                cvae_service.save_model(model, run_dir / "cvae.joblib")
            if model.state_dim != env.spec.state_dim or model.action_dim != env.spec.action_dim:
                raise ConfigurationError("CVAE dimensions do not match the environment")
            bundle = rl_service.init_learners(model, config.learner, np.random.default_rng(init_seq))
            state = self.new_state(config.curriculum, env.spec.horizon, config.total_steps)
            act_rng, update_rng = np.random.default_rng(act_seq), np.random.default_rng(update_seq)
            env.seed(int(env_seq.generate_state(1)[0]))
            s, episode_r_int, start, eval_returns = env.reset(), [], 0, []
            writer.write(MetricsRecord(kind="phase", step=0, seed=seed, phase=state.phase))

        learner = config.learner
        curriculum = config.curriculum
        try:
            for step in range(start, config.total_steps):
                acting_phase = state.phase
                s_acted = s
                choice = self.act(bundle, model, state, curriculum, s, step, rng=act_rng)
                s_next, r_ext, done, info = env.step(choice.action)

                r_int = 0.0
                if acting_phase == "LatentExploration":
                    r_int = rl_service.rnd_intrinsic(bundle.rnd, s, choice.z)
                    episode_r_int.append(r_int)
                rl_service.buffer_add(
                    bundle.buffer,
                    Transition(s=s, a=choice.action, r_ext=r_ext, r_int=r_int, s_next=s_next,
                               done=info["terminal"], source=choice.source, z=choice.z),
                )

                l_bc = None
                if bundle.buffer.size >= max(learner.learning_starts, learner.batch_size):
                    l_bc = self._learn(bundle, model, state, config, gamma, update_rng)

                if done:
                    if acting_phase == "LatentExploration" and episode_r_int:
                        self.plateau_detect(state.plateau, float(np.mean(episode_r_int)))
                        bundle.rnd.ema_episodic = state.plateau.ema
                    episode_r_int = []
                    s = env.reset()
                else:
                    s = s_next

                self.phase_step(state, state.plateau.plateaued, l_bc, curriculum, step + 1)
                decision = choice.decision
                writer.write(MetricsRecord(
                    kind="step", step=step, seed=seed, phase=acting_phase,
                    alpha=choice.alpha,
                    mode=decision.mode if decision else None,
                    reason=decision.reason if decision else None,
                    q_raw_mean=decision.q_raw_mean if decision else None,
                    q_z_mean=decision.q_z_mean if decision else None,
                    sigma_raw=decision.sigma_raw if decision else None,
                    r_ext=r_ext, r_int=r_int, r_int_ema=state.plateau.ema, l_bc=l_bc,
                    state=[float(v) for v in s_acted],
                ))
                if state.phase != acting_phase:
                    writer.write(MetricsRecord(kind="phase", step=step + 1, seed=seed, phase=state.phase,
                                               alpha=state.alpha))

                if (step + 1) % config.eval_interval == 0:
                    eval_return = self.evaluate_policy(bundle, model, env, state, curriculum, config.eval_episodes, seed + 1)
                    eval_returns.append((step + 1, eval_return))
                    writer.write(MetricsRecord(kind="eval", step=step + 1, seed=seed, phase=state.phase,
                                               eval_return=eval_return))
                if state.variant == "gate" and (step + 1) % config.snapshot_interval == 0:
                    self.save_policy_snapshot(
                        run_dir / "snapshots" / f"step_{step + 1:08d}.joblib", bundle, model, state, config
                    )
                if (step + 1) % config.checkpoint_interval == 0 and step + 1 < config.total_steps:
                    save_payload(checkpoint_path, "training_checkpoint", {
                        "step": step + 1, "model": model, "bundle": bundle, "state": state, "env": env,
                        "act_rng": act_rng, "update_rng": update_rng, "s": s, "episode_r_int": episode_r_int,
                        "eval_returns": eval_returns, "metrics_offset": writer.tell(),
                    })
        finally:
            writer.close()

        cvae_service.assert_frozen(model)
        rl_service.assert_rnd_frozen(bundle.rnd)
        self.save_policy_snapshot(run_dir / "policy.joblib", bundle, model, state, config)
        log_info("Training finished", run_dir=str(run_dir), phases=state.phase_history,
                 final_eval=eval_returns[-1][1] if eval_returns else None)
        return TrainingResult(run_dir=run_dir, metrics_path=metrics_path, state=state, bundle=bundle,
                              model=model, eval_returns=eval_returns)


# Singleton instance
curriculum_service = CurriculumService()
