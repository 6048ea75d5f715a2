"""Soft actor-critic learners, behavioural cloning and random network distillation."""
from typing import Callable, Optional, Tuple, Union

import joblib
import numpy as np
from sklearn.metrics import mean_absolute_error

from spaars.models.cvae import CvaeModel
from spaars.models.environment import Transition
from spaars.models.learners import (
    SOURCE_CODES,
    ActionValue,
    Batch,
    CriticEnsemble,
    LatentActor,
    LearnerBundle,
    RawActor,
    ReplayBuffer,
    RndPair,
    StateScaler,
)
from spaars.models.network import GaussianHead, MlpParams
from spaars.schemas.rl_schemas import LearnerConfig, VarianceProbeResult
from spaars.services.cvae_service import cvae_service
from spaars.services.network_service import LOG_2PI, network_service
from spaars.utils.errors import ConfigurationError, InputError, InvariantViolation, NumericError

StatesOrBatch = Union[Batch, np.ndarray]
NextActionFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]

SQUASH_EPS = 1e-6
MIN_PROBE_SAMPLES = 100


def _states(batch: StatesOrBatch) -> np.ndarray:
    states = batch.s if isinstance(batch, Batch) else np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if states.shape[0] == 0:
        raise InputError("Empty batch")
    return states


class RlService:
    """Updates for both actors, the shared critic ensemble and the RND pair."""

    # ------------------------------------------------------------------ construction

    def init_rnd(self, input_dim: int, config: LearnerConfig, rng: np.random.Generator) -> RndPair:
        """Target and predictor start from independent random weights and biases."""
        sizes = [input_dim, *config.rnd_hidden_sizes, config.rnd_output_dim]
        nets = []
        for _ in range(2):
            net = network_service.init_mlp(sizes, rng)
            for i, b in enumerate(net.biases):
                limit = 1.0 / np.sqrt(sizes[i])
                b[:] = rng.uniform(-limit, limit, b.shape)
            nets.append(net)
        target, predictor = nets
        rnd = RndPair(
            target=target,
            predictor=predictor,
            optimizer=network_service.optimizer_init(predictor, lr=config.rnd_lr),
        )
        rnd.target_fingerprint = joblib.hash(target.arrays())
        return rnd

    def init_learners(
        self,
        model: CvaeModel,
        config: LearnerConfig,
        rng: np.random.Generator,
    ) -> LearnerBundle:
        """
        Build both actors, the critic ensemble, the RND pair and an empty replay buffer.

        States are normalised with the statistics the CVAE was trained with.
        """
        s_dim, d, k = model.state_dim, model.action_dim, model.latent_dim
        scaler = StateScaler(shift=model.state_shift.copy(), scale=model.state_scale.copy())
        hidden = list(config.hidden_sizes)

        def temperature():
            log_t = np.array([np.log(config.init_temperature)])
            return log_t, network_service.optimizer_init([log_t], lr=config.temperature_lr)

        latent_net = network_service.init_mlp([s_dim, *hidden, 2 * k], rng, output_scale=0.1)
        log_t, t_opt = temperature()
        latent_actor = LatentActor(
            net=latent_net,
            scaler=scaler,
            optimizer=network_service.optimizer_init(latent_net, lr=config.actor_lr),
            log_temperature=log_t,
            temperature_optimizer=t_opt,
            latent_dim=k,
            target_entropy=-float(k),
        )

        raw_net = network_service.init_mlp([s_dim, *hidden, 2 * d], rng, output_scale=0.1)
        log_t, t_opt = temperature()
        raw_actor = RawActor(
            net=raw_net,
            scaler=scaler,
            optimizer=network_service.optimizer_init(raw_net, lr=config.actor_lr),
            bc_optimizer=network_service.optimizer_init(raw_net, lr=config.bc_lr),
            log_temperature=log_t,
            temperature_optimizer=t_opt,
            action_low=model.action_low.copy(),
            action_high=model.action_high.copy(),
            target_entropy=-float(d),
        )

        members = [
            network_service.init_mlp([s_dim + d, *hidden, 1], rng, activations=["relu"] * len(hidden) + ["identity"])
            for _ in range(config.ensemble_size)
        ]
        critic = CriticEnsemble(
            members=members,
            targets=[m.copy() for m in members],
            optimizers=[network_service.optimizer_init(m, lr=config.critic_lr) for m in members],
            scaler=scaler,
            state_dim=s_dim,
            action_dim=d,
            polyak=config.polyak,
            num_min_qs=min(config.num_min_qs, config.ensemble_size),
        )

        return LearnerBundle(
            latent_actor=latent_actor,
            raw_actor=raw_actor,
            critic=critic,
            rnd=self.init_rnd(s_dim + k, config, rng),
            buffer=ReplayBuffer.empty(config.buffer_capacity, s_dim, d, k),
            scaler=scaler,
        )

    # ------------------------------------------------------------------ policy heads

    def _head(self, net: MlpParams, scaler: StateScaler, s: np.ndarray):
        out, cache = network_service.forward_cached(net, scaler(s))
        dim = out.shape[-1] // 2
        log_std, dlog = network_service.squash_log_std(out[..., dim:])
        return network_service.make_head(out[..., :dim], log_std), cache, dlog

    def latent_actor_head(self, actor: LatentActor, s: np.ndarray) -> GaussianHead:
        return self._head(actor.net, actor.scaler, s)[0]

    def latent_actor_mean(self, actor: LatentActor, s: np.ndarray) -> np.ndarray:
        return self.latent_actor_head(actor, s).mean

    def sample_latent(self, actor: LatentActor, s: np.ndarray, rng: np.random.Generator):
        """Reparameterised z ~ pi_z(.|s) and its log-density."""
        head = self.latent_actor_head(actor, s)
        noise = rng.standard_normal(head.mean.shape)
        z = network_service.gaussian_sample(head, noise)
        return z, network_service.gaussian_log_prob(head, z)

    def raw_actor_head(self, actor: RawActor, s: np.ndarray) -> GaussianHead:
        return self._head(actor.net, actor.scaler, s)[0]

    def raw_actor_mean(self, actor: RawActor, s: np.ndarray) -> np.ndarray:
        head = self.raw_actor_head(actor, s)
        return actor.action_center + actor.action_half_range * np.tanh(head.mean)

    def _squashed_log_prob(self, actor: RawActor, head: GaussianHead, noise: np.ndarray, squashed: np.ndarray):
        gaussian = np.sum(-0.5 * noise ** 2 - head.log_std - 0.5 * LOG_2PI, axis=-1)
        jacobian = np.sum(np.log(actor.action_half_range * (1.0 - squashed ** 2) + SQUASH_EPS), axis=-1)
        return gaussian - jacobian

    def sample_raw_action(self, actor: RawActor, s: np.ndarray, rng: np.random.Generator):
        """a = c + h * tanh(u), u ~ N(mu, sigma); returns (a, log pi(a|s))."""
        head = self.raw_actor_head(actor, s)
        noise = rng.standard_normal(head.mean.shape)
        squashed = np.tanh(head.mean + head.std * noise)
        action = actor.action_center + actor.action_half_range * squashed
        return action, self._squashed_log_prob(actor, head, noise, squashed)

    # ------------------------------------------------------------------ critic

    def ensemble_stats(self, critic: ActionValue, s: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and population standard deviation over members, one entry per row."""
        values = critic.member_values(s, a)
        return values.mean(axis=0), values.std(axis=0)

    def _min_members(self, critic: ActionValue, rng: Optional[np.random.Generator]) -> np.ndarray:
        count = min(getattr(critic, "num_min_qs", 2), critic.size)
        if rng is None:
            return np.arange(count)
        return rng.choice(critic.size, size=count, replace=False)

    def td_targets(
        self,
        critic: CriticEnsemble,
        batch: Batch,
        next_action_fn: NextActionFn,
        gamma: float,
        temperature: float,
        rng: np.random.Generator,
        intrinsic_weight: float = 0.0,
    ) -> np.ndarray:
        """
        y = r_ext + lambda r_int + gamma (1 - done) (min_j Q'_j(s', a') - temperature log pi(a'|s')).

        Raises:
            NumericError: If any target is not finite
        """
        if len(batch) == 0:
            raise InputError("Empty batch")
        next_actions, next_log_probs = next_action_fn(batch.s_next)
        chosen = self._min_members(critic, rng)
        next_q = critic.member_values(batch.s_next, next_actions, target=True)[chosen].min(axis=0)
        bootstrap = np.where(batch.done > 0.5, 0.0, gamma * (next_q - temperature * next_log_probs))
        targets = batch.r_ext + intrinsic_weight * batch.r_int + bootstrap
        if not np.all(np.isfinite(targets)):
            raise NumericError("Non-finite TD target")
        return targets

    def soft_update(self, critic: CriticEnsemble):
        """target <- polyak * target + (1 - polyak) * online, element-wise and in place."""
        for target, online in zip(critic.targets, critic.members):
            for t, o in zip(target.arrays(), online.arrays()):
                t *= critic.polyak
                t += (1.0 - critic.polyak) * o

    def critic_update(
        self,
        critic: CriticEnsemble,
        batch: Batch,
        next_action_fn: NextActionFn,
        gamma: float,
        temperature: float,
        rng: np.random.Generator,
        intrinsic_weight: float = 0.0,
    ) -> np.ndarray:
        """
        Regress every member on the shared TD targets, then polyak-average the targets.

        Returns:
            Per-member mean squared TD errors before the step
        """
        targets = self.td_targets(critic, batch, next_action_fn, gamma, temperature, rng, intrinsic_weight)
        inputs = critic._inputs(batch.s, batch.a)
        n = len(batch)
        losses = np.zeros(critic.size)
        for i, (member, opt) in enumerate(zip(critic.members, critic.optimizers)):
            out, cache = network_service.forward_cached(member, inputs)
            error = out[:, 0] - targets
            losses[i] = float(np.mean(error ** 2))
            grads, _ = network_service.backward(member, cache, (2.0 / n) * error[:, None])
            network_service.optimizer_step(member, grads, opt)
        self.soft_update(critic)
        return losses

    def critic_fit_error(self, critic: ActionValue, q_fn: Callable, states: np.ndarray, actions: np.ndarray) -> float:
        """Mean absolute error of the ensemble mean against an oracle Q."""
        mean, _ = self.ensemble_stats(critic, states, actions)
        return float(mean_absolute_error(np.asarray(q_fn(states, actions)), mean))

    def _min_value_grads(self, critic: ActionValue, s, a, rng) -> Tuple[np.ndarray, np.ndarray]:
        """Value and action gradient of min over a random member subset, per row."""
        chosen = self._min_members(critic, rng)
        values = critic.member_values(s, a)[chosen]
        grads = critic.member_action_grads(s, a)[chosen]
        lowest = values.argmin(axis=0)
        rows = np.arange(values.shape[1])
        return values[lowest, rows], grads[lowest, rows]

    # ------------------------------------------------------------------ actors

    def latent_q_gradient(self, model: CvaeModel, critic: ActionValue, s: np.ndarray, z: np.ndarray) -> np.ndarray:
        """grad_z of the ensemble-mean Q(s, Dec(z, s)), i.e. J_Dec^T grad_a Q."""
        actions, vjp = cvae_service.decode_vjp(model, z, s)
        grad_a = critic.member_action_grads(np.atleast_2d(s), np.atleast_2d(actions)).mean(axis=0)
        return vjp(grad_a.reshape(np.shape(actions)))

    def latent_actor_update(
        self,
        actor: LatentActor,
        model: CvaeModel,
        critic: ActionValue,
        batch: StatesOrBatch,
        rng: np.random.Generator,
    ) -> Tuple[float, float]:
        """
        SAC step for pi_z: the critic gradient reaches z through the frozen decoder.

        Returns:
            (loss, mean log pi) before the step

        Raises:
            InvariantViolation: If the decoder changed
        """
        cvae_service.assert_frozen(model)
        states = _states(batch)
        n = states.shape[0]
        head, cache, dlog = self._head(actor.net, actor.scaler, states)
        noise = rng.standard_normal(head.mean.shape)
        z = head.mean + head.std * noise
        log_probs = np.sum(-0.5 * noise ** 2 - head.log_std - 0.5 * LOG_2PI, axis=1)

        actions, vjp = cvae_service.decode_vjp(model, z, states)
        q, grad_a = self._min_value_grads(critic, states, actions, rng)
        grad_z = -vjp(grad_a)
        alpha = actor.temperature
        loss = float(np.mean(alpha * log_probs - q))
        if not np.isfinite(loss):
            raise NumericError("Non-finite latent actor loss")

        grad_mean = grad_z / n
        grad_log_std = (-alpha + grad_z * head.std * noise) / n
        grads, _ = network_service.backward(
            actor.net, cache, np.concatenate([grad_mean, grad_log_std * dlog], axis=1)
        )
        network_service.optimizer_step(actor.net, grads, actor.optimizer)
        cvae_service.assert_frozen(model)
        return loss, float(np.mean(log_probs))

    def raw_actor_bc_update(self, actor: RawActor, batch: StatesOrBatch, actions: Optional[np.ndarray] = None) -> float:
        """
        One behavioural-cloning step toward the batch actions.

        Returns:
            L_BC = mean over rows of ||c + h tanh(mu(s)) - a||^2, measured before the step
        """
        states = _states(batch)
        targets = batch.a if actions is None else np.atleast_2d(actions)
        n = states.shape[0]
        out, cache = network_service.forward_cached(actor.net, actor.scaler(states))
        d = actor.action_dim
        squashed = np.tanh(out[:, :d])
        residual = actor.action_center + actor.action_half_range * squashed - targets
        loss = float(np.mean(np.sum(residual ** 2, axis=1)))

        grad_out = np.zeros_like(out)
        grad_out[:, :d] = (2.0 / n) * residual * actor.action_half_range * (1.0 - squashed ** 2)
        grads, _ = network_service.backward(actor.net, cache, grad_out)
        network_service.optimizer_step(actor.net, grads, actor.bc_optimizer)
        return loss

    def bc_loss(self, actor: RawActor, states: np.ndarray, actions: np.ndarray) -> float:
        """L_BC without an update."""
        residual = self.raw_actor_mean(actor, states) - actions
        return float(np.mean(np.sum(residual ** 2, axis=1)))

    def raw_actor_sac_update(
        self, actor: RawActor, critic: ActionValue, batch: StatesOrBatch, rng: np.random.Generator
    ) -> Tuple[float, float]:
        """
        Entropy-regularised SAC step for the tanh-squashed raw policy.

        Returns:
            (loss, mean log pi) before the step

        Raises:
            InputError: On an empty batch
        """
        states = _states(batch)
        n = states.shape[0]
        head, cache, dlog = self._head(actor.net, actor.scaler, states)
        noise = rng.standard_normal(head.mean.shape)
        squashed = np.tanh(head.mean + head.std * noise)
        actions = actor.action_center + actor.action_half_range * squashed
        log_probs = self._squashed_log_prob(actor, head, noise, squashed)

        q, grad_a = self._min_value_grads(critic, states, actions, rng)
        alpha = actor.temperature
        loss = float(np.mean(alpha * log_probs - q))
        if not np.isfinite(loss):
            raise NumericError("Non-finite raw actor loss")

        slope = actor.action_half_range * (1.0 - squashed ** 2)
        grad_u = alpha * 2.0 * squashed * slope / (slope + SQUASH_EPS) - grad_a * slope
        grad_mean = grad_u / n
        grad_log_std = (-alpha + grad_u * head.std * noise) / n
        grads, _ = network_service.backward(
            actor.net, cache, np.concatenate([grad_mean, grad_log_std * dlog], axis=1)
        )
        network_service.optimizer_step(actor.net, grads, actor.optimizer)
        return loss, float(np.mean(log_probs))

    def temperature_update(self, actor: Union[LatentActor, RawActor], mean_log_prob: float) -> float:
        """Move log(temperature) so the policy entropy tracks the target entropy."""
        grad = -actor.temperature * (mean_log_prob + actor.target_entropy)
        network_service.optimizer_step_arrays([actor.log_temperature], [np.array([grad])], actor.temperature_optimizer)
        return actor.temperature

    # ------------------------------------------------------------------ RND

    def _rnd_inputs(self, rnd: RndPair, s: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(z)], axis=1)
        if hasattr(rnd.input_scaler, "mean_"):
            x = np.clip(rnd.input_scaler.transform(x), -rnd.input_clip, rnd.input_clip)
        return x

    def _reward_scale(self, rnd: RndPair) -> float:
        if not hasattr(rnd.reward_scaler, "scale_"):
            return 1.0
        return float(rnd.reward_scaler.scale_[0])

    def rnd_intrinsic(self, rnd: RndPair, s: np.ndarray, z: np.ndarray) -> Union[float, np.ndarray]:
        """Normalised squared prediction error of the predictor against the frozen target."""
        x = self._rnd_inputs(rnd, s, z)
        error = np.sum((network_service.forward(rnd.predictor, x) - network_service.forward(rnd.target, x)) ** 2, axis=1)
        reward = error / self._reward_scale(rnd)
        return float(reward[0]) if np.ndim(s) == 1 else reward

    def rnd_update(self, rnd: RndPair, batch: Union[Batch, Tuple[np.ndarray, np.ndarray]]) -> float:
        """
        Update the running normalisers and take one predictor step.

        Returns:
            Predictor loss (mean squared error per row) before the step
        """
        s, z = (batch.s, batch.z) if isinstance(batch, Batch) else batch
        s, z = np.atleast_2d(s), np.atleast_2d(z)
        if s.shape[0] == 0:
            raise InputError("Empty batch")
        rnd.input_scaler.partial_fit(np.concatenate([s, z], axis=1))
        x = self._rnd_inputs(rnd, s, z)
        target = network_service.forward(rnd.target, x)
        out, cache = network_service.forward_cached(rnd.predictor, x)
        residual = out - target
        errors = np.sum(residual ** 2, axis=1)
        rnd.reward_scaler.partial_fit(errors[:, None])

        n = s.shape[0]
        grads, _ = network_service.backward(rnd.predictor, cache, (2.0 / n) * residual)
        network_service.optimizer_step(rnd.predictor, grads, rnd.optimizer)
        return float(np.mean(errors))

    def assert_rnd_frozen(self, rnd: RndPair):
        if joblib.hash(rnd.target.arrays()) != rnd.target_fingerprint:
            raise InvariantViolation("RND target network was modified")

    # ------------------------------------------------------------------ replay

    def buffer_add(self, buffer: ReplayBuffer, transition: Transition):
        """Insert at the cursor, overwriting the oldest entry once full."""
        i = buffer.cursor
        buffer.states[i] = transition.s
        buffer.actions[i] = transition.a
        if transition.z is not None:
            buffer.latents[i] = transition.z
        else:
            buffer.latents[i] = 0.0
        buffer.r_ext[i] = transition.r_ext
        buffer.r_int[i] = transition.r_int
        buffer.next_states[i] = transition.s_next
        buffer.dones[i] = float(transition.done)
        buffer.sources[i] = SOURCE_CODES[transition.source]
        buffer.cursor = (i + 1) % buffer.capacity
        buffer.size = min(buffer.size + 1, buffer.capacity)

    def _rows(self, buffer: ReplayBuffer, idx: np.ndarray) -> Batch:
        return Batch(
            s=buffer.states[idx],
            a=buffer.actions[idx],
            z=buffer.latents[idx],
            r_ext=buffer.r_ext[idx],
            r_int=buffer.r_int[idx],
            s_next=buffer.next_states[idx],
            done=buffer.dones[idx],
            source=buffer.sources[idx],
        )

    def buffer_sample(self, buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
        if buffer.size == 0:
            raise InputError("Cannot sample from an empty replay buffer")
        return self._rows(buffer, rng.integers(0, buffer.size, size=batch_size))

    def buffer_contents(self, buffer: ReplayBuffer) -> Batch:
        """All stored transitions, oldest first."""
        if buffer.size < buffer.capacity:
            idx = np.arange(buffer.size)
        else:
            idx = (np.arange(buffer.capacity) + buffer.cursor) % buffer.capacity
        return self._rows(buffer, idx)

    # ------------------------------------------------------------------ variance probe

    def reinforce_variance_probe(
        self,
        critic_fn: Callable[[np.ndarray], np.ndarray],
        head: GaussianHead,
        space: str,
        n_samples: int,
        seed: int,
    ) -> VarianceProbeResult:
        """
        Monte-Carlo variance of the score-function estimator Q(x) (x - mu) / sigma^2.

        Args:
            critic_fn: Maps samples (n, dim) to values (n,)
            head: Isotropic Gaussian the samples are drawn from
            space: latent or raw
            n_samples: Number of Monte-Carlo samples (at least 100)
            seed: Sampling seed

        Returns:
            Trace of the gradient covariance and Var[Q] under the sampling distribution

        Raises:
            InputError: Too few samples or a non-isotropic head
        """
        if n_samples < MIN_PROBE_SAMPLES:
            raise InputError(f"n_samples must be at least {MIN_PROBE_SAMPLES}, got {n_samples}")
        if space not in ("latent", "raw"):
            raise ConfigurationError(f"Unknown probe space '{space}'")
        std = np.atleast_1d(head.std)
        if not np.allclose(std, std[0]):
            raise InputError("Variance probe needs an isotropic Gaussian head")

        rng = np.random.default_rng(seed)
        sigma = float(std[0])
        noise = rng.standard_normal((n_samples, head.dim))
        samples = head.mean + sigma * noise
        values = np.asarray(critic_fn(samples), dtype=np.float64).reshape(n_samples)
        grads = values[:, None] * noise / sigma
        return VarianceProbeResult(
            space=space,
            dim=head.dim,
            n_samples=n_samples,
            sigma=sigma,
            grad_variance=float(np.sum(grads.var(axis=0))),
            q_variance=float(values.var()),
            grad_mean_norm=float(np.linalg.norm(grads.mean(axis=0))),
        )


# Singleton instance
rl_service = RlService()
