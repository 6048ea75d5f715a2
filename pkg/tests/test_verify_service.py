import json

import numpy as np
import pytest

from spaars.models.environment import QuadraticBandit
from spaars.schemas.rl_schemas import LearnerConfig
from spaars.schemas.verify_schemas import BoundReport, VerifyConfig
from spaars.services.rl_service import rl_service
from spaars.services.verify_service import BanditArtifacts, verify_service
from spaars.utils.errors import ConfigurationError

SMALL = VerifyConfig(
    dataset_pairs=400, cvae_epochs=10, critic_steps=200, bc_steps=100, variance_samples=2000,
    calibration_samples=500, regret_noise_levels=[0.1], regret_seeds=4, smoothness_steps=300,
)


def test_report_verdicts():
    assert BoundReport(name="x", measured=1.0, bound=2.0).status == "pass"
    assert BoundReport(name="x", measured=2.05, bound=2.0, tolerance=0.05).passed
    failing = BoundReport(name="x", measured=3.0, bound=2.0)
    assert failing.status == "fail" and failing.counts_as_failure
    assert failing.slack == pytest.approx(-1.0)
    qualitative = BoundReport(name="x", measured=3.0, bound=2.0, override="qualitative")
    assert qualitative.status == "qualitative" and not qualitative.counts_as_failure
    assert json.loads(failing.model_dump_json())["status"] == "fail"


def test_identity_decoder_has_no_variance_advantage():
    center = np.array([0.1, -0.2, 0.3])

    def q_fn(actions):
        return -np.sum((actions - center) ** 2, axis=1)

    report = verify_service.variance_report(
        q_fn, lambda z: z, np.zeros(3), action_dim=3, sigma=0.3, n_samples=100_000, seed=0
    )
    assert report.inputs["k"] == report.inputs["d"] == 3.0
    assert report.measured == pytest.approx(1.0, rel=0.1)
    assert report.status == "pass"


def test_latent_probe_variance_scales_with_dimension_ratio():
    direction = np.ones(4) / 2.0

    def q_fn(actions):
        return 10.0 + actions @ direction

    def decode_fn(z):
        return z[:, :1] * direction

    report = verify_service.variance_report(q_fn, decode_fn, np.zeros(1), 4, 0.2, 100_000, seed=1)
    assert report.extra["dimension_ratio"] == 0.25
    assert report.measured == pytest.approx(0.25, rel=0.05)
    assert report.status == "pass"


def test_constant_critic_gives_dimension_ratio():
    direction = np.ones(4) / 2.0
    report = verify_service.variance_report(
        lambda a: np.full(len(a), 2.0), lambda z: z[:, :1] * direction, np.zeros(1), 4, 0.2, 100_000, seed=0
    )
    assert report.status == "pass"
    assert report.bound == pytest.approx(0.25)
    assert report.measured == pytest.approx(0.25, rel=0.15)
    assert report.extra["var_grad_raw"] == pytest.approx(16.0 / 0.2 ** 2, rel=0.05)


def test_constant_critic_control_through_trained_decoder(bandit_cvae, bandit_dataset):
    artifacts = BanditArtifacts(env=QuadraticBandit(action_dim=4), dataset=bandit_dataset, model=bandit_cvae)
    report = verify_service.check_constant_critic_control(artifacts, n_samples=100_000, seed=3)
    assert report.name == "variance_constant_critic"
    assert report.tolerance == 0.15
    assert report.measured == pytest.approx(bandit_cvae.latent_dim / 4, rel=0.15)
    assert not report.counts_as_failure


def test_zero_critic_is_inconclusive():
    report = verify_service.variance_report(
        lambda a: np.zeros(len(a)), lambda z: z, np.zeros(2), 2, 0.2, 1000, seed=0
    )
    assert report.status == "inconclusive"
    assert not report.counts_as_failure


def test_exploitation_gap_on_expert_bandit(bandit_cvae, bandit_dataset):
    report = verify_service.check_exploitation_gap(QuadraticBandit(action_dim=4), bandit_cvae, bandit_dataset)
    assert report.name == "exploitation_gap[bandit-quadratic/expert_noisy]"
    assert report.inputs["gamma"] == 0.0
    assert report.inputs["L_Q"] == pytest.approx(6.0)
    assert report.measured >= -1e-12
    assert report.status == "pass"
    assert report.extra["mean_distance_to_optimum"] > 0.0


def test_transition_smoothness_holds_for_any_actor(bandit_cvae, bandit_dataset):
    bundle = rl_service.init_learners(bandit_cvae, LearnerConfig(hidden_sizes=[8]), np.random.default_rng(0))
    report = verify_service.check_transition_smoothness(
        bandit_dataset.states, bandit_dataset.actions, bundle.raw_actor
    )
    assert report.extra["deviation_per_alpha"]["0.0"] == 0.0
    assert report.measured <= 1.0
    assert report.status == "pass"


def test_gate_regret_vanishes_with_exact_critic():
    reports = verify_service.check_gate_regret([0.0, 0.1], seeds=4, seed=0, n_jobs=1)
    exact, noisy = reports
    assert exact.name == "gate_regret[eps_Q=0.0]"
    assert exact.measured == 0.0
    assert exact.status == "pass"
    assert 0.0 <= noisy.measured <= noisy.extra["bound_two_eps"]


def test_gate_convergence_needs_two_snapshots(tmp_path):
    report = verify_service.check_gate_convergence([])
    assert report.status == "not_applicable"


def test_run_suite_rejects_unknown_checks(tmp_path):
    with pytest.raises(ConfigurationError):
        verify_service.run_suite(["variance", "telepathy"], tmp_path)


def test_run_suite_writes_reports(tmp_path):
    config = SMALL.model_copy(update={"regret_noise_levels": []})
    reports = verify_service.run_suite(["regret", "convergence"], tmp_path, seed=0, config=config)
    assert [r.name for r in reports] == ["gate_regret[eps_Q=0.0]", "gate_convergence"]
    lines = (tmp_path / "reports.jsonl").read_text().splitlines()
    assert len(lines) == 2
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "name,measured,bound,slack,tolerance,status"


@pytest.mark.slow
def test_bandit_suite_produces_all_reports(tmp_path):
    reports = verify_service.run_suite(["variance", "calibration", "corollary"], tmp_path, seed=0, config=SMALL)
    names = [r.name for r in reports]
    assert names == ["variance_reduction", "variance_constant_critic", "calibration_stability", "stability_corollary"]
    calibration = reports[2]
    assert 0.0 <= calibration.measured <= 1.0
    assert set(calibration.extra["pass_rate_per_alpha"]) == {"0.0", "0.25", "0.5", "0.75", "1.0"}
    assert reports[3].inputs["eps_BC"] >= 0.0
