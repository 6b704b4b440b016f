import numpy as np
import pytest

from rl.data import ToyPathConfig, random_tabular_mdp, toy_expert_curves
from rl.envs import TabularEnv, ToyPathEnv, grid_deviation, rollout, straight_policy, toy_step
from rl.oracle import TabularPolicy, solve_policy_values, value_iteration


@pytest.fixture
def env():
    """
    Toy-Umgebung: 50 Gitterpunkte auf [-1.3, 0], gamma 0.99
    """
    return ToyPathEnv.default()


def expert_policy(env, curve):
    def act(obs):
        idx = int(np.searchsorted(env.x_grid, obs[0] + 1e-9, side="right"))
        return np.array([curve[idx] if idx < len(curve) else 0.0])

    return act


def test_straight_policy_reaches_target(env):
    """
    Test für den geraden Pfad: 49 Ticks, Return gamma^48
    """
    result = rollout(env, straight_policy)
    assert result.reached_target
    assert result.steps == 49
    assert result.discounted_return == pytest.approx(0.99 ** 48, rel=1e-12)
    assert result.undiscounted_return == 1.0
    assert grid_deviation(env, result) == 0.0


def test_experts_earn_less_than_straight_path(env):
    """
    Test für längere Expertenpfade: geringerer diskontierter Return
    """
    straight = rollout(env, straight_policy).discounted_return
    for curve in toy_expert_curves(ToyPathConfig()):
        result = rollout(env, expert_policy(env, curve))
        assert result.reached_target
        assert result.discounted_return < straight


def test_random_piecewise_policies_never_beat_straight(env):
    """
    Test für 100 zufällige stückweise konstante Policies
    """
    rng = np.random.default_rng(0)
    straight = rollout(env, straight_policy).discounted_return
    for _ in range(100):
        levels = rng.uniform(-1.5, 1.5, size=5)
        cuts = np.sort(rng.uniform(-1.3, 0.0, size=4))

        def policy(obs, levels=levels, cuts=cuts):
            return np.array([levels[int(np.searchsorted(cuts, obs[0]))]])

        assert rollout(env, policy).discounted_return <= straight


def test_out_of_range_action_is_clamped(env):
    """
    Test für Clamping statt Fehler bei Aktionen außerhalb der Grenzen
    """
    outcome = toy_step(env, env.start, 5.0)
    assert outcome.clamped
    result = rollout(env, lambda obs: np.array([5.0]))
    assert result.clamped
    assert result.reached_target
    assert np.max(result.positions()[:, 1]) <= 1.5 + 1e-12


def test_zero_max_steps(env):
    """
    Test für max_steps = 0: leere Trajektorie
    """
    result = rollout(env, straight_policy, max_steps=0)
    assert result.steps == 0
    assert result.discounted_return == 0.0
    assert not result.reached_target


def test_discount_accounting(env):
    """
    Test für Übereinstimmung von laufendem und nachgerechnetem Return
    """
    curve = toy_expert_curves(ToyPathConfig())[2]
    result = rollout(env, expert_policy(env, curve))
    assert abs(result.recomputed_return(env.gamma) - result.discounted_return) <= 1e-12


def test_tabular_rollout_matches_optimal_values():
    """
    Test für Rollout der optimalen Policy gegen Value Iteration
    """
    rng = np.random.default_rng(2)
    for _ in range(5):
        mdp = random_tabular_mdp(6, 3, rng)
        values, greedy = value_iteration(mdp)
        actions = greedy.greedy_actions()
        result = rollout(TabularEnv(mdp), lambda obs: actions[int(np.argmax(obs))])
        assert result.discounted_return == pytest.approx(values.v[mdp.start_state], abs=1e-9)


def test_tabular_rollout_matches_policy_values():
    """
    Test für deterministische Policies: Rollout gegen exakte Werte
    """
    rng = np.random.default_rng(8)
    mdp = random_tabular_mdp(7, 4, rng)
    for _ in range(10):
        actions = rng.integers(0, 4, size=7).tolist()
        exact = solve_policy_values(mdp, TabularPolicy.deterministic(actions, 4)).v[mdp.start_state]
        result = rollout(TabularEnv(mdp), lambda obs: actions[int(np.argmax(obs))])
        assert result.discounted_return == pytest.approx(exact, abs=1e-9)


def test_tabular_env_rejects_unknown_action():
    """
    Test für ungültigen Aktionsindex
    """
    mdp = random_tabular_mdp(3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        TabularEnv(mdp).step(0, np.int64(5))


def test_segment_ticks_round_to_nearest_step(env):
    """
    Test für Ticks pro Spalte: kleine Abweichungen kosten keinen Extra-Tick
    """
    spacing = env.x_grid[1] - env.x_grid[0]
    assert toy_step(env, env.start, 0.8 * spacing).next_state[0] == pytest.approx(env.x_grid[1])
    far = toy_step(env, env.start, 2.0 * spacing)
    assert far.next_state[0] < env.x_grid[1]
    assert np.hypot(*(far.next_state - env.start)) == pytest.approx(env.step_length)


def test_expert_loss_against_straight_path(env):
    """
    Test für den Abstand der Experten: 10 bis 40 % unter dem geraden Pfad
    """
    straight = rollout(env, straight_policy).discounted_return
    best = max(rollout(env, expert_policy(env, c)).discounted_return for c in toy_expert_curves(ToyPathConfig()))
    assert 0.6 * straight <= best <= 0.9 * straight
