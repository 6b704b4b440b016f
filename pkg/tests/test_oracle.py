import numpy as np
import pytest

from rl.data import ADVANCE, SKIP, TabularMdp, random_supports, random_tabular_mdp, stitching_mdp
from rl.oracle import (
    TabularPolicy,
    check_policy_improvement,
    discounted_occupancy,
    performance_gap,
    policy_evaluation,
    solve_policy_values,
    supported_argmax_policy,
    value_iteration,
)
from utils.errors import ConsistencyError


@pytest.fixture
def random_instance():
    """
    Zufälliges MDP (8 Zustände, 4 Aktionen) mit Supports und Verhaltenspolicy
    """
    rng = np.random.default_rng(21)
    mdp = random_tabular_mdp(8, 4, rng)
    supports = random_supports(mdp, rng)
    return mdp, supports, TabularPolicy.uniform_over(supports, 4)


@pytest.fixture
def stitching():
    """
    Kette mit zwei Teil-Experten
    """
    mdp, expert_a, expert_b = stitching_mdp()
    supports = [sorted({a, b}) for a, b in zip(expert_a, expert_b)]
    return mdp, expert_a, expert_b, supports


def chain_mdp(length, gamma=0.9):
    next_state = [[min(s + 1, length)] for s in range(length + 1)]
    reward = [[1.0 if s == length - 1 else 0.0] for s in range(length + 1)]
    return TabularMdp(length + 1, 1, next_state, reward, gamma, frozenset({length}))


def test_gamma_zero_gives_immediate_reward(random_instance):
    """
    Test für gamma = 0: V = erwartete Sofortbelohnung
    """
    mdp, _, beta = random_instance
    flat = TabularMdp(mdp.n_states, mdp.n_actions, mdp.next_state, mdp.reward, 0.0, mdp.terminal_states)
    values = policy_evaluation(flat, beta)
    np.testing.assert_allclose(values.v, np.sum(beta.probs * mdp.reward, axis=1), atol=1e-12)


def test_reward_on_entering_terminal():
    """
    Test für Kette der Länge d: V(s0) = gamma^(d-1)
    """
    for length in (1, 3, 6):
        values = policy_evaluation(chain_mdp(length), TabularPolicy.deterministic([0] * (length + 1), 1))
        assert values.v[0] == pytest.approx(0.9 ** (length - 1), abs=1e-9)


def test_iterative_matches_direct_solution(random_instance):
    """
    Test für iterative Policy Evaluation gegen lineares Gleichungssystem
    """
    mdp, _, beta = random_instance
    np.testing.assert_allclose(policy_evaluation(mdp, beta).v, solve_policy_values(mdp, beta).v, atol=1e-8)
    assert solve_policy_values(mdp, beta).bellman_residual(mdp, beta) <= 1e-9


def test_value_iteration_residual(random_instance):
    """
    Test für Bellman-Optimalität nach Value Iteration
    """
    mdp, _, _ = random_instance
    values, greedy = value_iteration(mdp)
    assert values.bellman_residual(mdp, greedy) <= 1e-9
    assert greedy.is_deterministic()


def test_singleton_supports_return_behavior(random_instance):
    """
    Test für Einzel-Supports: das Ergebnis ist die Verhaltenspolicy selbst
    """
    mdp, _, _ = random_instance
    supports = [[s % 4] for s in range(mdp.n_states)]
    beta = TabularPolicy.uniform_over(supports, 4)
    assert supported_argmax_policy(mdp, solve_policy_values(mdp, beta), supports) == beta


def test_full_support_is_greedy(random_instance):
    """
    Test für vollen Support: Greedy bzgl. Q^beta
    """
    mdp, _, _ = random_instance
    supports = [[0, 1, 2, 3]] * mdp.n_states
    beta = TabularPolicy.uniform_over(supports, 4)
    values = solve_policy_values(mdp, beta)
    pi = supported_argmax_policy(mdp, values, supports)
    assert pi.greedy_actions() == [int(a) for a in np.argmax(values.q, axis=1)]


def test_stitching_beats_both_experts(stitching):
    """
    Test für Stitching: strikt besser als jeder Experte
    """
    mdp, expert_a, expert_b, supports = stitching
    beta = TabularPolicy.uniform_over(supports, mdp.n_actions)
    pi = supported_argmax_policy(mdp, solve_policy_values(mdp, beta), supports)
    assert pi.greedy_actions()[:6] == [SKIP] * 6
    assert pi.greedy_actions()[6] == ADVANCE

    j_pi = solve_policy_values(mdp, pi).v[0]
    for expert in (expert_a, expert_b):
        assert j_pi > solve_policy_values(mdp, TabularPolicy.deterministic(expert, mdp.n_actions)).v[0]
    assert j_pi == pytest.approx(0.9 ** 3)


def test_performance_gap_of_identical_policies(random_instance):
    """
    Test für pi = beta: Lücke 0
    """
    mdp, _, beta = random_instance
    assert abs(performance_gap(mdp, beta, beta)) < 1e-12


def test_optimal_versus_uniform(random_instance):
    """
    Test für Lücke zwischen optimaler und gleichverteilter Policy
    """
    mdp, _, _ = random_instance
    values, greedy = value_iteration(mdp)
    uniform = TabularPolicy(np.full((mdp.n_states, 4), 0.25))
    gap = performance_gap(mdp, greedy, uniform)
    assert gap == pytest.approx(values.v[0] - solve_policy_values(mdp, uniform).v[0], abs=1e-8)
    assert gap >= 0.0


def test_occupancy_is_a_distribution(random_instance):
    """
    Test für diskontierte Besuchsverteilung: Summe 1, nichtnegativ
    """
    mdp, _, beta = random_instance
    d = discounted_occupancy(mdp, beta)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(d >= -1e-15)


def test_policy_improvement_on_random_instances():
    """
    Test für 100 Zufalls-MDPs: keine Verschlechterung, Identität stimmt
    """
    report = check_policy_improvement(n_instances=100, seed=0)
    assert report.instances == 100
    assert report.passed
    assert report.min_gap >= -1e-10
    assert report.max_lemma_error <= 1e-8


def test_inconsistent_identity_raises(stitching, mocker):
    """
    Test für ConsistencyError bei abweichender Identität
    """
    mdp, expert_a, _, supports = stitching
    beta = TabularPolicy.deterministic(expert_a, mdp.n_actions)
    pi = TabularPolicy.deterministic([SKIP] * mdp.n_states, mdp.n_actions)
    mocker.patch("rl.oracle.discounted_occupancy", return_value=np.zeros(mdp.n_states))
    with pytest.raises(ConsistencyError):
        performance_gap(mdp, pi, beta)


def test_invalid_policy_rows():
    """
    Test für ungültige Policy-Tabellen
    """
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.4]]))
    with pytest.raises(ValueError):
        TabularPolicy.uniform_over([[]], 2)
