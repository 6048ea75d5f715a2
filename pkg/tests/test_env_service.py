import numpy as np
import pytest

from spaars.models.environment import PointMaze, QuadraticBandit, Reach1d
from spaars.services.env_service import env_service
from spaars.utils.errors import ConfigurationError, InputError, UnsupportedError


def test_make_env_by_name():
    env = env_service.make_env("bandit-quadratic", seed=3, action_dim=6)
    assert isinstance(env, QuadraticBandit)
    assert env.spec.action_dim == 6
    np.testing.assert_allclose(env.a_star, [0.5, -0.5, 0.5, -0.5, 0.5, -0.5])


def test_make_env_rejects_unknown_name_and_options():
    with pytest.raises(ConfigurationError):
        env_service.make_env("cartpole")
    with pytest.raises(ConfigurationError):
        env_service.make_env("reach-1d", action_dim=3)


def test_bandit_reward_and_lipschitz():
    env = QuadraticBandit(action_dim=4)
    assert env.reward(env.a_star) == pytest.approx(0.0)
    assert env.reward(np.zeros(4)) == pytest.approx(-1.0)
    assert env.q_lipschitz() == pytest.approx(6.0)
    s = env.reset()
    _, r, done, info = env.step(np.zeros(4))
    assert r == pytest.approx(-1.0)
    assert done and info["terminal"]
    np.testing.assert_allclose(s, [1.0])


def test_step_clips_actions_and_checks_shape():
    env = Reach1d(seed=0)
    env.reset()
    env.state = np.array([0.0])
    s_next, r, _, _ = env.step(np.array([5.0]))
    np.testing.assert_allclose(s_next, [0.25])
    assert r == pytest.approx(-0.75)
    with pytest.raises(ConfigurationError):
        env.step(np.zeros(2))


def test_step_before_reset():
    with pytest.raises(InputError):
        Reach1d().step(np.zeros(1))


def test_reach_truncates_at_horizon():
    env = Reach1d(seed=1)
    env.reset()
    for t in range(20):
        _, _, done, info = env.step(np.zeros(1))
        assert done == (t == 19)
    assert info["truncated"] and not info["terminal"]


def test_reach_expert_saturates():
    env = Reach1d()
    np.testing.assert_allclose(env.expert_action(np.array([-1.0])), [1.0])
    np.testing.assert_allclose(env.expert_action(np.array([0.9])), [0.4])


def test_maze_goal_is_terminal():
    env = PointMaze()
    s_next, r, terminal = env.transition(np.array([4.0, 4.5, 0.0, 0.0]), np.array([1.0, 0.0]))
    assert r == 1.0 and terminal
    np.testing.assert_allclose(s_next, [4.25, 4.5, 0.5, 0.0])


def test_maze_blocks_walls_and_corners():
    env = PointMaze()
    wall_hit, r, terminal = env.transition(np.array([2.9, 0.5, 0.0, 0.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(wall_hit, [2.9, 0.5, 0.0, 0.0])
    assert r == 0.0 and not terminal

    # end point is free but the path cuts the wall cell at row 1, column 1
    corner, _, _ = env.transition(np.array([1.9, 0.9, 1.0, 1.0]), np.zeros(2))
    np.testing.assert_allclose(corner, [1.9, 0.9, 0.0, 0.0])


def test_maze_expert_heads_along_corridor():
    env = PointMaze()
    np.testing.assert_allclose(env.expert_action(np.array([0.5, 0.5, 0.0, 0.0])), [1.0, 0.0])


def test_generate_dataset_is_seeded_and_bounded():
    first = env_service.generate_dataset(Reach1d(), "medium", 300, seed=7)
    second = env_service.generate_dataset(Reach1d(), "medium", 300, seed=7)
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.actions, second.actions)
    assert first.n_pairs == 300
    assert np.all(np.abs(first.actions) <= 1.0)
    assert first.metadata.behavior == "medium"


def test_random_safe_stays_in_inner_box():
    dataset = env_service.generate_dataset(QuadraticBandit(), "random_safe", 500, seed=0)
    assert np.all(np.abs(dataset.actions) <= 0.5)


def test_generate_dataset_rejects_bad_requests():
    with pytest.raises(InputError):
        env_service.generate_dataset(Reach1d(), "medium", 0, seed=0)
    with pytest.raises(ConfigurationError):
        env_service.generate_dataset(Reach1d(), "adversarial", 10, seed=0)


def test_dataset_file_keeps_values_and_metadata(tmp_path):
    dataset = env_service.generate_dataset(PointMaze(), "expert_noisy", 200, seed=1)
    path = env_service.save_dataset(dataset, tmp_path / "maze.csv")
    assert path.read_text().startswith("# {")
    loaded = env_service.load_dataset(path, PointMaze().spec)
    np.testing.assert_array_equal(loaded.states, dataset.states)
    np.testing.assert_array_equal(loaded.actions, dataset.actions)
    assert loaded.metadata == dataset.metadata


def test_load_dataset_validation(tmp_path):
    dataset = env_service.generate_dataset(Reach1d(), "medium", 50, seed=0)
    path = env_service.save_dataset(dataset, tmp_path / "reach.csv")
    with pytest.raises(ConfigurationError):
        env_service.load_dataset(path, PointMaze().spec)
    with pytest.raises(ConfigurationError):
        env_service.load_dataset(tmp_path / "missing.csv")

    headerless = tmp_path / "headerless.csv"
    headerless.write_text("s0,a0\n0.1,0.2\n")
    with pytest.raises(ConfigurationError):
        env_service.load_dataset(headerless)

    empty = tmp_path / "empty.csv"
    empty.write_text("# " + dataset.metadata.model_dump_json() + "\ns0,a0,r\n")
    with pytest.raises(InputError):
        env_service.load_dataset(empty)


def test_behavior_return_orders_policies():
    expert = env_service.behavior_return("reach-1d", "expert_noisy", episodes=5, seed=0)
    random_safe = env_service.behavior_return("reach-1d", "random_safe", episodes=5, seed=0)
    assert expert > random_safe


def test_sweep_states_shapes():
    reach = env_service.sweep_states(Reach1d())
    assert reach.shape == (101, 1)
    maze = env_service.sweep_states(PointMaze(), resolution=2)
    assert maze.shape[1] == 4
    assert np.all(maze[:, 2:] == 0.0)
    env = PointMaze()
    assert all(env.is_free(row[:2]) for row in maze)


def test_tabular_mdp_rows_are_distributions():
    mdp = env_service.build_tabular_mdp(Reach1d(), n_states=41, n_actions=21)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0)
    assert mdp.transitions.min() >= 0.0


def test_value_iteration_matches_greedy_policy_evaluation():
    mdp = env_service.build_tabular_mdp(Reach1d(), n_states=41, n_actions=21)
    value, q = env_service.value_iteration(mdp)
    greedy = q.argmax(axis=1)
    np.testing.assert_allclose(env_service.evaluate_tabular_policy(mdp, greedy), value, atol=1e-7)
    # the goal state is absorbing under the zero action
    goal = int(np.argmin(np.abs(mdp.states - 1.0)))
    assert value[goal] == pytest.approx(0.0, abs=1e-8)


def test_tabular_mdp_only_for_reach():
    with pytest.raises(UnsupportedError):
        env_service.build_tabular_mdp(PointMaze())


def test_bandit_oracle_finds_optimum_on_grid(bandit_cvae):
    env = QuadraticBandit(action_dim=4)
    result = env_service.brute_force_optima(env, bandit_cvae, grid_resolution=41)
    assert result.j_raw == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(result.a_star, env.a_star, atol=1e-12)
    assert result.j_latent <= result.j_raw + 1e-12
    assert result.exploitation_gap >= -1e-12
    assert result.lipschitz_q == pytest.approx(6.0)
    assert result.z_star.shape == (2,)


def test_reach_oracle_per_state_maximisers(reach_cvae):
    result = env_service.brute_force_optima(Reach1d(), reach_cvae, grid_resolution=21)
    assert result.a_star.shape == (201, 1)
    assert result.states.shape == (201, 1)
    assert result.j_raw < 0.0
    assert np.isfinite(result.j_latent)
    assert result.lipschitz_q > 0.0
    # far left of the goal the best raw action pushes right at full strength
    assert result.a_star[0, 0] == pytest.approx(1.0)


def _cell_bound(result, env, resolution):
    """Largest drop in J one grid cell can explain: L_Q times the cell diagonal."""
    cell = (env.action_high - env.action_low) / (resolution - 1)
    return result.lipschitz_q * float(np.linalg.norm(cell))


@pytest.mark.parametrize("env_name, resolutions", [
    ("bandit-quadratic", (11, 21, 41)),
    ("reach-1d", (21, 41, 81)),
])
def test_oracle_is_monotone_in_grid_resolution(env_name, resolutions, bandit_cvae, reach_cvae):
    env = env_service.make_env(env_name)
    model = bandit_cvae if env_name == "bandit-quadratic" else reach_cvae
    results = [env_service.brute_force_optima(env, model, grid_resolution=r) for r in resolutions]
    for (coarse_res, coarse), fine in zip(zip(resolutions, results), results[1:]):
        assert fine.j_raw >= coarse.j_raw - _cell_bound(coarse, env, coarse_res)
    assert results[-1].j_raw >= results[0].j_raw - 1e-12


def test_oracle_refuses_long_horizons(bandit_cvae):
    with pytest.raises(UnsupportedError):
        env_service.brute_force_optima(PointMaze(), bandit_cvae)
