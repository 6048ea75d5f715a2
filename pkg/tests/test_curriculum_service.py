import numpy as np
import pytest
from pydantic import ValidationError

from spaars.models.environment import Reach1d
from spaars.models.learners import FunctionCritic
from spaars.schemas.curriculum_schemas import CurriculumConfig, GateConfig, GateDecision, PlateauConfig
from spaars.schemas.cvae_schemas import CvaeTrainConfig
from spaars.schemas.rl_schemas import LearnerConfig
from spaars.schemas.run_schemas import RunConfig
from spaars.services.curriculum_service import curriculum_service
from spaars.services.rl_service import rl_service
from spaars.utils.errors import ConfigurationError, InputError
from spaars.utils.metrics import read_metrics

GATE = GateConfig(margin=3.0, sigma_max=10.0, warmup_steps=100)


def _linear_critic(*slopes):
    """Member k scores an action by slopes[k] * a[0]."""
    return FunctionCritic(value_fns=[lambda s, a, c=c: c * a[:, 0] for c in slopes])


def _state(variant="schedule", total_steps=1000, **overrides):
    config = CurriculumConfig(variant=variant, plateau=PlateauConfig(window=3), **overrides)
    return curriculum_service.new_state(config, horizon=20, total_steps=total_steps), config


def test_new_state_defaults():
    state, _ = _state(total_steps=1000)
    assert state.phase == "LatentExploration"
    assert state.ramp_steps == 250
    assert state.warmup_steps == 2 * 3 * 20
    assert state.phase_history == ["LatentExploration"]


def test_plateau_after_constant_window():
    state, _ = _state()
    results = [curriculum_service.plateau_detect(state.plateau, 1.0)[1] for _ in range(4)]
    assert results == [False, False, False, True]


def test_no_plateau_while_bonus_keeps_changing():
    state, _ = _state()
    results = [curriculum_service.plateau_detect(state.plateau, 2.0 ** i)[1] for i in range(8)]
    assert not any(results)


def test_zero_bonus_counts_as_plateau():
    state, _ = _state()
    for _ in range(4):
        _, plateaued = curriculum_service.plateau_detect(state.plateau, 0.0)
    assert plateaued


def test_alpha_schedule_ramps_linearly():
    state, _ = _state()
    assert curriculum_service.alpha_schedule(state, 500) == 0.0
    state.phase, state.transition_start, state.ramp_steps = "Transition", 100, 50
    assert curriculum_service.alpha_schedule(state, 125) == pytest.approx(0.5)
    assert curriculum_service.alpha_schedule(state, 400) == 1.0
    state.phase = "RawExploitation"
    assert curriculum_service.alpha_schedule(state, 0) == 1.0


def test_blend_endpoints_and_midpoint():
    a_z, a_raw = np.array([0.2, -0.4]), np.array([0.6, 0.8])
    np.testing.assert_array_equal(curriculum_service.blend(a_z, a_raw, 0.0), a_z)
    np.testing.assert_array_equal(curriculum_service.blend(a_z, a_raw, 1.0), a_raw)
    np.testing.assert_allclose(curriculum_service.blend(a_z, a_raw, 0.5), [0.4, 0.2])
    clipped = curriculum_service.blend(np.array([2.0]), np.array([2.0]), 0.5, np.array([-1.0]), np.array([1.0]))
    np.testing.assert_allclose(clipped, [1.0])


def test_blend_validation():
    with pytest.raises(InputError):
        curriculum_service.blend(np.zeros(2), np.zeros(2), 1.5)
    with pytest.raises(ConfigurationError):
        curriculum_service.blend(np.zeros(2), np.zeros(3), 0.5)


def test_schedule_phase_machine():
    state, config = _state(eps_bc=0.1, ramp_steps=10)
    curriculum_service.phase_step(state, plateaued=True, l_bc=0.5, config=config, step=1)
    assert state.phase == "LatentExploration"
    curriculum_service.phase_step(state, plateaued=False, l_bc=0.01, config=config, step=2)
    assert state.phase == "LatentExploration"
    curriculum_service.phase_step(state, plateaued=True, l_bc=None, config=config, step=3)
    assert state.phase == "Transition" and state.transition_start == 3

    curriculum_service.phase_step(state, plateaued=True, l_bc=None, config=config, step=8)
    assert state.alpha == pytest.approx(0.5)
    curriculum_service.phase_step(state, plateaued=True, l_bc=None, config=config, step=13)
    assert state.phase == "RawExploitation" and state.alpha == 1.0
    assert state.phase_history == ["LatentExploration", "Transition", "RawExploitation"]


def test_gate_variant_activates_gate():
    state, config = _state(variant="gate")
    curriculum_service.phase_step(state, plateaued=True, l_bc=0.0, config=config, step=5)
    assert state.phase == "GateActive"


def test_latent_only_never_leaves_exploration():
    state, config = _state(variant="latent_only")
    for step in range(10):
        curriculum_service.phase_step(state, plateaued=True, l_bc=0.0, config=config, step=step)
    assert state.phase == "LatentExploration"


@pytest.mark.parametrize(
    "slopes, step, mode, reason",
    [
        ((50.0, 50.0), 10, "latent", "warmup"),
        ((2.0, 2.0), 200, "latent", "margin_fail"),
        ((3.0, 3.0), 200, "latent", "margin_fail"),
        ((-10.0, 30.0), 200, "latent", "disagreement"),
        ((5.0, 5.0), 200, "raw", "fired"),
    ],
)
def test_gate_safeguards(slopes, step, mode, reason):
    decision = curriculum_service.gate_decide(
        np.zeros(1), np.array([0.0]), np.array([1.0]), _linear_critic(*slopes), GATE, step
    )
    assert (decision.mode, decision.reason) == (mode, reason)
    assert decision.advantage == pytest.approx(np.mean(slopes))


def test_gate_commitment_holds_decision():
    state, _ = _state(variant="gate")
    gate = GateConfig(margin=3.0, sigma_max=10.0, warmup_steps=0, commitment=3)
    args = (np.zeros(1), np.array([0.0]), np.array([1.0]))
    first = curriculum_service.gate_decide(*args, _linear_critic(5.0, 5.0), gate, 1, state)
    held = [curriculum_service.gate_decide(*args, _linear_critic(0.0, 0.0), gate, 2 + i, state) for i in range(2)]
    fresh = curriculum_service.gate_decide(*args, _linear_critic(0.0, 0.0), gate, 4, state)
    assert first.reason == "fired"
    assert all(d.reason == "fired" for d in held)
    assert fresh.reason == "margin_fail"


def test_gate_decision_requires_consistent_reason():
    with pytest.raises(ValidationError):
        GateDecision(mode="raw", q_raw_mean=1.0, q_z_mean=0.0, sigma_raw=0.0, reason="margin_fail")


@pytest.fixture
def bundle(bandit_cvae):
    return rl_service.init_learners(bandit_cvae, LearnerConfig(hidden_sizes=[16]), np.random.default_rng(0))


def test_act_per_phase(bundle, bandit_cvae):
    state, config = _state()
    s = np.ones(1)
    latent = curriculum_service.act(bundle, bandit_cvae, state, config, s, 0)
    assert latent.source == "latent" and latent.alpha == 0.0
    assert np.all(np.abs(latent.action) <= 1.0)

    state.phase, state.transition_start, state.ramp_steps = "Transition", 0, 10
    blended = curriculum_service.act(bundle, bandit_cvae, state, config, s, 5)
    raw_mean = rl_service.raw_actor_mean(bundle.raw_actor, s)
    np.testing.assert_allclose(blended.action, 0.5 * latent.action + 0.5 * raw_mean)
    assert blended.source == "blend"

    state.phase = "RawExploitation"
    raw = curriculum_service.act(bundle, bandit_cvae, state, config, s, 20, rng=np.random.default_rng(0))
    assert raw.source == "raw" and raw.alpha == 1.0


def test_act_in_gate_phase_records_decision(bundle, bandit_cvae):
    state, config = _state(variant="gate")
    state.phase = "GateActive"
    choice = curriculum_service.act(bundle, bandit_cvae, state, config, np.ones(1), 0)
    assert choice.decision is not None and choice.decision.reason == "warmup"
    assert choice.source == "latent"


def test_activation_set_is_boolean_mask(bundle, bandit_cvae):
    mask = curriculum_service.activation_set(
        np.ones((5, 1)), bandit_cvae, bundle.latent_actor, bundle.raw_actor, bundle.critic, GateConfig(margin=0.0)
    )
    assert mask.dtype == bool and mask.shape == (5,)


def test_evaluation_is_deterministic(bundle, bandit_cvae):
    from spaars.models.environment import QuadraticBandit

    state, config = _state()
    env = QuadraticBandit()
    first = curriculum_service.evaluate_policy(bundle, bandit_cvae, env, state, config, episodes=3, seed=1)
    second = curriculum_service.evaluate_policy(bundle, bandit_cvae, env, state, config, episodes=3, seed=1)
    assert first == second <= 0.0


def _run_config(tmp_path, variant, **overrides):
    values = dict(
        env="reach-1d",
        dataset_path="unused.csv",
        cvae=CvaeTrainConfig(latent_dim=1, hidden_sizes=[16], epochs=5),
        curriculum=CurriculumConfig(
            variant=variant, eps_bc=10.0, plateau=PlateauConfig(window=2, tau=1e6), ramp_steps=100,
            gate=GateConfig(warmup_steps=0),
        ),
        learner=LearnerConfig(hidden_sizes=[16, 16], batch_size=32, learning_starts=64, ensemble_size=2),
        total_steps=600,
        eval_interval=200,
        eval_episodes=2,
        checkpoint_interval=300,
        snapshot_interval=200,
        seed=0,
        output_dir=str(tmp_path / variant),
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.mark.slow
def test_schedule_run_walks_all_phases(tmp_path, reach_dataset, reach_cvae):
    config = _run_config(tmp_path, "schedule")
    result = curriculum_service.run_training(config, Reach1d(), reach_dataset, model=reach_cvae)
    assert result.state.phase_history == ["LatentExploration", "Transition", "RawExploitation"]

    records = read_metrics(result.metrics_path)
    steps = [r for r in records if r.kind == "step"]
    assert [r.step for r in steps] == list(range(600))
    assert len([r for r in records if r.kind == "eval"]) == 3
    assert [r.phase for r in records if r.kind == "phase"] == result.state.phase_history
    alphas = [r.alpha for r in steps if r.phase == "Transition"]
    assert alphas == sorted(alphas)
    for name in ("config.json", "versions.json", "policy.joblib", "checkpoints/latest.joblib"):
        assert (result.run_dir / name).exists()


@pytest.mark.slow
def test_gate_run_writes_snapshots(tmp_path, reach_dataset, reach_cvae):
    config = _run_config(tmp_path, "gate")
    result = curriculum_service.run_training(config, Reach1d(), reach_dataset, model=reach_cvae)
    assert result.state.phase_history == ["LatentExploration", "GateActive"]
    assert len(list((result.run_dir / "snapshots").glob("step_*.joblib"))) == 3
    gate_steps = [r for r in read_metrics(result.metrics_path) if r.kind == "step" and r.phase == "GateActive"]
    assert gate_steps and all(r.reason is not None for r in gate_steps)


@pytest.mark.slow
def test_latent_only_run_stays_latent(tmp_path, reach_dataset, reach_cvae):
    config = _run_config(tmp_path, "latent_only", total_steps=200, eval_interval=100)
    result = curriculum_service.run_training(config, Reach1d(), reach_dataset, model=reach_cvae)
    assert result.state.phase_history == ["LatentExploration"]


@pytest.mark.slow
def test_resume_reproduces_uninterrupted_run(tmp_path, reach_dataset, reach_cvae):
    config = _run_config(tmp_path, "schedule")
    result = curriculum_service.run_training(config, Reach1d(), reach_dataset, model=reach_cvae)
    uninterrupted = result.metrics_path.read_text()

    resumed = curriculum_service.run_training(config, Reach1d(), reach_dataset, resume=True)
    assert resumed.metrics_path.read_text() == uninterrupted


@pytest.mark.slow
@pytest.mark.parametrize("variant, pretrained", [("schedule", True), ("gate", False)])
def test_same_seed_gives_identical_metrics(tmp_path, reach_dataset, reach_cvae, variant, pretrained):
    streams = []
    for name in ("first", "second"):
        config = _run_config(tmp_path, variant, output_dir=str(tmp_path / name))
        model = reach_cvae if pretrained else None
        result = curriculum_service.run_training(config, Reach1d(), reach_dataset, model=model)
        streams.append(result.metrics_path.read_bytes())
    assert streams[0] == streams[1]
    assert streams[0]


def test_resume_without_checkpoint_fails(tmp_path, reach_dataset, reach_cvae):
    config = _run_config(tmp_path, "schedule")
    with pytest.raises(ConfigurationError):
        curriculum_service.run_training(config, Reach1d(), reach_dataset, model=reach_cvae, resume=True)


def test_dimension_mismatch_is_rejected(tmp_path, bandit_dataset):
    config = _run_config(tmp_path, "schedule")
    with pytest.raises(ConfigurationError):
        curriculum_service.run_training(config, Reach1d(), bandit_dataset)
