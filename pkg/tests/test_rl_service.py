import copy

import numpy as np
import pytest

from spaars.models.environment import Transition
from spaars.models.learners import Batch, CriticEnsemble, FunctionCritic, ReplayBuffer, TabularCritic
from spaars.schemas.rl_schemas import LearnerConfig
from spaars.services.cvae_service import cvae_service
from spaars.services.network_service import network_service
from spaars.services.rl_service import rl_service
from spaars.utils.errors import ConfigurationError, InputError, InvariantViolation, NumericError

TARGET = np.array([0.5, -0.5, 0.5, -0.5])


def _quadratic_critic(center=TARGET):
    return FunctionCritic(
        value_fns=[lambda s, a: -np.sum((a - center) ** 2, axis=-1)],
        grad_fns=[lambda s, a: -2.0 * (a - center)],
    )


def _zero_critic():
    return FunctionCritic(value_fns=[lambda s, a: np.zeros(len(a))], grad_fns=[lambda s, a: np.zeros_like(a)])


@pytest.fixture
def bundle(bandit_cvae):
    config = LearnerConfig(hidden_sizes=[32, 32], ensemble_size=3, num_min_qs=3, buffer_capacity=50)
    return rl_service.init_learners(bandit_cvae, config, np.random.default_rng(0))


def _batch(n, s_dim=1, d=4, k=2, done=1.0, r=1.0):
    return Batch(
        s=np.ones((n, s_dim)),
        a=np.zeros((n, d)),
        z=np.zeros((n, k)),
        r_ext=np.full(n, r),
        r_int=np.full(n, 0.5),
        s_next=np.ones((n, s_dim)),
        done=np.full(n, done),
        source=np.zeros(n, dtype=np.int64),
    )


def test_init_learners_shapes(bundle, bandit_cvae):
    assert bundle.critic.size == 3
    assert bundle.latent_actor.latent_dim == bandit_cvae.latent_dim
    assert bundle.raw_actor.action_dim == 4
    assert bundle.buffer.size == 0
    s = np.ones((5, 1))
    np.testing.assert_allclose(
        bundle.critic.member_values(s, np.zeros((5, 4))), bundle.critic.member_values(s, np.zeros((5, 4)), target=True)
    )
    assert rl_service.sample_latent(bundle.latent_actor, s, np.random.default_rng(0))[0].shape == (5, 2)


def test_critic_needs_two_members(bundle):
    with pytest.raises(ConfigurationError):
        CriticEnsemble(
            members=bundle.critic.members[:1], targets=bundle.critic.targets[:1], optimizers=bundle.critic.optimizers[:1],
            scaler=bundle.critic.scaler, state_dim=1, action_dim=4,
        )


def test_critic_checks_input_dims(bundle):
    with pytest.raises(ConfigurationError):
        bundle.critic.member_values(np.ones((2, 1)), np.zeros((2, 3)))


def test_ensemble_stats_use_population_std():
    critic = FunctionCritic(value_fns=[lambda s, a: np.ones(len(a)), lambda s, a: np.full(len(a), 3.0)])
    mean, std = rl_service.ensemble_stats(critic, np.zeros((2, 1)), np.zeros((2, 1)))
    np.testing.assert_allclose(mean, [2.0, 2.0])
    np.testing.assert_allclose(std, [1.0, 1.0])


def test_td_target_without_bootstrap_on_terminal(bundle):
    batch = _batch(4, done=1.0)

    def next_action(s_next):
        return np.zeros((len(s_next), 4)), np.zeros(len(s_next))

    targets = rl_service.td_targets(bundle.critic, batch, next_action, 0.99, 0.1, np.random.default_rng(0), 2.0)
    np.testing.assert_allclose(targets, 1.0 + 2.0 * 0.5)


def test_td_target_bootstraps_min_over_targets(bundle):
    batch = _batch(4, done=0.0, r=0.0)
    log_probs = np.full(4, -1.0)

    def next_action(s_next):
        return np.zeros((len(s_next), 4)), log_probs

    targets = rl_service.td_targets(bundle.critic, batch, next_action, 0.9, 0.2, np.random.default_rng(0))
    next_q = bundle.critic.member_values(batch.s_next, batch.a, target=True).min(axis=0)
    np.testing.assert_allclose(targets, 0.9 * (next_q + 0.2))


def test_td_target_rejects_non_finite(bundle):
    batch = _batch(2, r=float("nan"))
    with pytest.raises(NumericError):
        rl_service.td_targets(
            bundle.critic, batch, lambda s: (np.zeros((2, 4)), np.zeros(2)), 0.9, 0.1, np.random.default_rng(0)
        )


def test_soft_update_moves_targets_by_one_minus_polyak(bundle):
    critic = bundle.critic
    before = critic.targets[0].biases[-1].copy()
    critic.members[0].biases[-1] += 1.0
    online = critic.members[0].biases[-1].copy()
    rl_service.soft_update(critic)
    np.testing.assert_allclose(critic.targets[0].biases[-1], critic.polyak * before + (1 - critic.polyak) * online)


def test_critic_update_fits_terminal_rewards(bundle):
    rng = np.random.default_rng(1)
    batch = _batch(32, done=1.0, r=2.0)
    batch.a = rng.uniform(-1, 1, (32, 4))
    for opt in bundle.critic.optimizers:
        opt.lr = 1e-2

    def next_action(s):
        return np.zeros((len(s), 4)), np.zeros(len(s))

    first = rl_service.critic_update(bundle.critic, batch, next_action, 0.99, 0.0, rng)
    for _ in range(200):
        last = rl_service.critic_update(bundle.critic, batch, next_action, 0.99, 0.0, rng)
    assert first.shape == (3,)
    assert np.all(last < 0.05 * first)


def test_critic_fit_error_is_zero_for_exact_critic():
    critic = _quadratic_critic()
    states, actions = np.ones((10, 1)), np.random.default_rng(0).uniform(-1, 1, (10, 4))
    q = critic.value_fns[0]
    assert rl_service.critic_fit_error(critic, q, states, actions) == pytest.approx(0.0)


def test_latent_q_gradient_matches_finite_differences(bandit_cvae):
    critic = _quadratic_critic(np.array([0.2, 0.1, -0.3, 0.4]))
    s, z = np.ones(1), np.array([0.3, -0.4])
    grad = rl_service.latent_q_gradient(bandit_cvae, critic, s, z)

    def value(z_):
        return float(critic.value_fns[0](s, cvae_service.decode(bandit_cvae, z_, s)))

    eps = 1e-6
    numeric = np.array([(value(z + eps * e) - value(z - eps * e)) / (2 * eps) for e in np.eye(2)])
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)


def test_latent_actor_update_keeps_decoder_frozen(bundle, bandit_cvae):
    fingerprint = bandit_cvae.fingerprint
    loss, mean_log_prob = rl_service.latent_actor_update(
        bundle.latent_actor, bandit_cvae, _quadratic_critic(), np.ones((16, 1)), np.random.default_rng(0)
    )
    assert np.isfinite(loss) and np.isfinite(mean_log_prob)
    assert cvae_service._fingerprint(bandit_cvae) == fingerprint


def test_latent_actor_update_refuses_modified_decoder(bundle, bandit_cvae):
    model = copy.deepcopy(bandit_cvae)
    model.decoder.biases[-1] += 0.1
    with pytest.raises(InvariantViolation):
        rl_service.latent_actor_update(
            bundle.latent_actor, model, _quadratic_critic(), np.ones((4, 1)), np.random.default_rng(0)
        )


def test_latent_actor_climbs_critic_through_decoder(bundle, bandit_cvae):
    actor = bundle.latent_actor
    actor.optimizer.lr = 1e-2
    actor.log_temperature[:] = np.log(1e-4)
    s = np.ones((32, 1))
    center = cvae_service.decode(bandit_cvae, np.array([1.0, -1.0]), np.ones(1))
    critic = _quadratic_critic(center)

    def decoded_value():
        z = rl_service.latent_actor_mean(actor, np.ones(1))
        return float(critic.value_fns[0](None, cvae_service.decode(bandit_cvae, z, np.ones(1))))

    before = decoded_value()
    rng = np.random.default_rng(0)
    for _ in range(300):
        rl_service.latent_actor_update(actor, bandit_cvae, critic, s, rng)
    assert decoded_value() > before


def test_latent_actor_entropy_grows_under_large_temperature(bundle, bandit_cvae):
    actor = bundle.latent_actor
    actor.optimizer.lr = 1e-2
    actor.log_temperature[:] = np.log(100.0)
    s = np.ones((16, 1))
    rng = np.random.default_rng(0)
    for _ in range(300):
        rl_service.latent_actor_update(actor, bandit_cvae, _zero_critic(), s, rng)
    assert np.all(rl_service.latent_actor_head(actor, np.ones(1)).log_std > 1.5)


def test_raw_actor_entropy_grows_under_large_temperature(bundle):
    actor = bundle.raw_actor
    actor.optimizer.lr = 1e-2
    actor.log_temperature[:] = np.log(100.0)
    s = np.ones((16, 1))
    before = rl_service.raw_actor_head(actor, np.ones(1)).log_std.copy()
    rng = np.random.default_rng(0)
    for _ in range(300):
        rl_service.raw_actor_sac_update(actor, _zero_critic(), s, rng)
    after = rl_service.raw_actor_head(actor, np.ones(1)).log_std
    assert np.all(after > before + 0.5)


def test_raw_actor_sac_moves_toward_optimum(bundle):
    actor = bundle.raw_actor
    actor.optimizer.lr = 1e-2
    actor.log_temperature[:] = np.log(1e-4)
    s = np.ones((32, 1))
    start = np.linalg.norm(rl_service.raw_actor_mean(actor, np.ones(1)) - TARGET)
    rng = np.random.default_rng(0)
    for _ in range(300):
        loss, _ = rl_service.raw_actor_sac_update(actor, _quadratic_critic(), s, rng)
    assert np.linalg.norm(rl_service.raw_actor_mean(actor, np.ones(1)) - TARGET) < 0.5 * start
    assert np.isfinite(loss)


def test_raw_action_samples_stay_in_bounds(bundle):
    actions, log_probs = rl_service.sample_raw_action(bundle.raw_actor, np.ones((100, 1)), np.random.default_rng(0))
    assert np.all(np.abs(actions) < 1.0)
    assert log_probs.shape == (100,)


def test_bc_update_fits_expert_actions(bandit_cvae):
    config = LearnerConfig(hidden_sizes=[32, 32], bc_lr=1e-2)
    bundle = rl_service.init_learners(bandit_cvae, config, np.random.default_rng(2))
    rng = np.random.default_rng(0)
    states = rng.uniform(0.0, 2.0, (64, 1))
    actions = np.tile(TARGET, (64, 1)) * (states - 1.0)
    first = rl_service.raw_actor_bc_update(bundle.raw_actor, states, actions)
    for _ in range(500):
        rl_service.raw_actor_bc_update(bundle.raw_actor, states, actions)
    assert rl_service.bc_loss(bundle.raw_actor, states, actions) < 0.1 * first


def test_bc_update_rejects_empty_batch(bundle):
    with pytest.raises(InputError):
        rl_service.raw_actor_bc_update(bundle.raw_actor, np.zeros((0, 1)), np.zeros((0, 4)))


def test_temperature_rises_when_entropy_is_below_target(bundle):
    actor = bundle.raw_actor
    before = actor.temperature
    # mean log-prob well above -target_entropy means too little entropy
    after = rl_service.temperature_update(actor, mean_log_prob=10.0)
    assert after > before
    assert rl_service.temperature_update(actor, mean_log_prob=-50.0) < after


def test_rnd_bonus_decays_on_familiar_inputs(bundle):
    rnd = bundle.rnd
    rnd.optimizer.lr = 1e-2
    rng = np.random.default_rng(0)
    for _ in range(500):
        s = 1.0 + 0.01 * rng.standard_normal((64, 1))
        z = 0.01 * rng.standard_normal((64, 2))
        rl_service.rnd_update(rnd, (s, z))
    familiar = rl_service.rnd_intrinsic(rnd, np.ones(1), np.zeros(2))
    novel = rl_service.rnd_intrinsic(rnd, np.array([3.0]), np.array([2.0, -2.0]))
    assert isinstance(familiar, float)
    assert novel > 10.0 * familiar
    rl_service.assert_rnd_frozen(rnd)


def test_rnd_target_modification_is_detected(bundle):
    bundle.rnd.target.weights[0][0, 0] += 1.0
    with pytest.raises(InvariantViolation):
        rl_service.assert_rnd_frozen(bundle.rnd)


def test_replay_buffer_overwrites_oldest():
    buffer = ReplayBuffer.empty(3, state_dim=1, action_dim=1, latent_dim=1)
    with pytest.raises(InputError):
        rl_service.buffer_sample(buffer, 2, np.random.default_rng(0))
    for i in range(5):
        rl_service.buffer_add(
            buffer,
            Transition(s=np.array([i]), a=np.zeros(1), r_ext=float(i), s_next=np.array([i + 1]), done=False, source="raw"),
        )
    assert buffer.size == 3
    contents = rl_service.buffer_contents(buffer)
    np.testing.assert_allclose(contents.r_ext, [2.0, 3.0, 4.0])
    assert len(rl_service.buffer_sample(buffer, 8, np.random.default_rng(0))) == 8


def test_transition_rejects_unknown_source():
    with pytest.raises(ConfigurationError):
        Transition(s=np.zeros(1), a=np.zeros(1), r_ext=0.0, s_next=np.zeros(1), done=False, source="teleport")


def test_tabular_critic_nearest_lookup():
    tables = np.arange(6, dtype=float).reshape(1, 2, 3)
    critic = TabularCritic(states=np.array([0.0, 1.0]), actions=np.array([-1.0, 0.0, 1.0]), tables=tables)
    np.testing.assert_allclose(critic.member_values(np.array([[0.9]]), np.array([[0.1]])), [[4.0]])


def test_variance_probe_scales_with_dimension():
    constant = lambda x: np.ones(len(x))  # noqa: E731
    latent = rl_service.reinforce_variance_probe(
        constant, network_service.make_head(np.zeros(1), np.full(1, np.log(0.5))), "latent", 200_000, seed=0
    )
    raw = rl_service.reinforce_variance_probe(
        constant, network_service.make_head(np.zeros(4), np.full(4, np.log(0.5))), "raw", 200_000, seed=0
    )
    assert raw.grad_variance == pytest.approx(16.0, rel=0.02)
    assert latent.grad_variance / raw.grad_variance == pytest.approx(0.25, rel=0.05)
    assert latent.q_variance == pytest.approx(0.0)


def test_variance_probe_validates_inputs():
    head = network_service.make_head(np.zeros(2), np.array([0.0, -1.0]))
    with pytest.raises(InputError):
        rl_service.reinforce_variance_probe(lambda x: np.ones(len(x)), head, "raw", 1000, seed=0)
    iso = network_service.make_head(np.zeros(2), np.zeros(2))
    with pytest.raises(InputError):
        rl_service.reinforce_variance_probe(lambda x: np.ones(len(x)), iso, "raw", 10, seed=0)
