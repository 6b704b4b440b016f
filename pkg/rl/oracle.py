"""
Exact tabular computations used as ground truth for the neural pipeline:
policy evaluation, value iteration, the support-restricted greedy policy and
the performance-difference check.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from rl.data import Supports, TabularMdp, random_supports, random_tabular_mdp
from utils.errors import ConsistencyError

_PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Action distribution per state, shape [n_states, n_actions]."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > _PROB_TOL):
            raise ValueError("every policy row must be a probability distribution")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        actions = [int(a) for a in actions]
        if any(not 0 <= a < n_actions for a in actions):
            raise ValueError(f"action index outside [0, {n_actions})")
        return cls(np.eye(n_actions)[actions])

    @classmethod
    def uniform_over(cls, supports: Supports, n_actions: int) -> "TabularPolicy":
        probs = np.zeros((len(supports), n_actions))
        for s, support in enumerate(supports):
            if not support:
                raise ValueError(f"support of state {s} is empty")
            probs[s, list(support)] = 1.0 / len(support)
        return cls(probs)

    @property
    def n_states(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.probs.shape[1])

    def greedy_actions(self) -> List[int]:
        return [int(a) for a in np.argmax(self.probs, axis=1)]

    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0, atol=_PROB_TOL, rtol=0.0)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.array_equal(self.probs, other.probs))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ValueTable:
    v: np.ndarray
    q: np.ndarray

    def bellman_residual(self, mdp: TabularMdp, policy: Optional[TabularPolicy] = None) -> float:
        """max |Q - (r + gamma V(P))| plus, given a policy, max |V - sum_a pi Q|."""
        residual = float(np.max(np.abs(self.q - (mdp.reward + mdp.gamma * self.v[mdp.next_state]))))
        if policy is not None:
            residual = max(residual, float(np.max(np.abs(self.v - np.sum(policy.probs * self.q, axis=1)))))
        return residual


def _check(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")


def _transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    p = np.zeros((mdp.n_states, mdp.n_states))
    for a in range(mdp.n_actions):
        np.add.at(p, (np.arange(mdp.n_states), mdp.next_state[:, a]), policy.probs[:, a])
    return p


def policy_evaluation(mdp: TabularMdp, policy: TabularPolicy, tol: float = 1e-11, max_iter: int = 1_000_000) -> ValueTable:
    """
    Iterate V <- r_pi + gamma P_pi V until the sup-norm error bound
    |dV| * gamma / (1 - gamma) drops below ``tol``.
    """
    _check(mdp, policy)
    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - mdp.gamma) / mdp.gamma if mdp.gamma > 0 else np.inf
    for _ in range(max_iter):
        q = mdp.reward + mdp.gamma * v[mdp.next_state]
        new_v = np.sum(policy.probs * q, axis=1)
        delta = float(np.max(np.abs(new_v - v)))
        v = new_v
        if delta <= threshold:
            break
    return ValueTable(v=v, q=mdp.reward + mdp.gamma * v[mdp.next_state])


def solve_policy_values(mdp: TabularMdp, policy: TabularPolicy) -> ValueTable:
    """Direct solution of (I - gamma P_pi) V = r_pi."""
    _check(mdp, policy)
    r_pi = np.sum(policy.probs * mdp.reward, axis=1)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * _transition_matrix(mdp, policy), r_pi)
    return ValueTable(v=v, q=mdp.reward + mdp.gamma * v[mdp.next_state])


def value_iteration(mdp: TabularMdp, tol: float = 1e-11, max_iter: int = 1_000_000):
    """Optimal values and the greedy (lowest-index tie-break) policy."""
    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - mdp.gamma) / mdp.gamma if mdp.gamma > 0 else np.inf
    for _ in range(max_iter):
        q = mdp.reward + mdp.gamma * v[mdp.next_state]
        new_v = q.max(axis=1)
        delta = float(np.max(np.abs(new_v - v)))
        v = new_v
        if delta <= threshold:
            break
    q = mdp.reward + mdp.gamma * v[mdp.next_state]
    return ValueTable(v=q.max(axis=1), q=q), TabularPolicy.deterministic(np.argmax(q, axis=1), mdp.n_actions)


def supported_argmax_policy(mdp: TabularMdp, values: ValueTable, supports: Supports) -> TabularPolicy:
    """Per state, the support action with the largest Q; ties go to the lowest index."""
    if len(supports) != mdp.n_states:
        raise ValueError(f"need one support per state, got {len(supports)}")
    actions = []
    for s, support in enumerate(supports):
        if not support:
            raise ValueError(f"support of state {s} is empty")
        ordered = sorted(int(a) for a in support)
        q = values.q[s, ordered]
        actions.append(ordered[int(np.argmax(q))])
    return TabularPolicy.deterministic(actions, mdp.n_actions)


def discounted_occupancy(mdp: TabularMdp, policy: TabularPolicy, start_state: Optional[int] = None) -> np.ndarray:
    """d(s) = (1 - gamma) sum_t gamma^t Pr(s_t = s), from the flow equations."""
    _check(mdp, policy)
    start = mdp.start_state if start_state is None else int(start_state)
    e = np.zeros(mdp.n_states)
    e[start] = 1.0
    p = _transition_matrix(mdp, policy)
    return (1.0 - mdp.gamma) * np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p.T, e)


def performance_gap(mdp: TabularMdp, pi: TabularPolicy, beta: TabularPolicy, start_state: Optional[int] = None,
                    tol: float = 1e-8) -> float:
    """
    J(pi) - J(beta), computed from exact values and again through the
    performance-difference identity 1/(1-gamma) E_{s~d_pi}[E_{a~pi} Q_beta - V_beta].
    """
    start = mdp.start_state if start_state is None else int(start_state)
    v_pi = solve_policy_values(mdp, pi)
    v_beta = solve_policy_values(mdp, beta)
    direct = float(v_pi.v[start] - v_beta.v[start])

    advantage = np.sum(pi.probs * v_beta.q, axis=1) - v_beta.v
    occupancy = discounted_occupancy(mdp, pi, start)
    lemma = float(occupancy @ advantage / (1.0 - mdp.gamma))

    if abs(direct - lemma) > tol:
        raise ConsistencyError(f"performance gap mismatch: direct={direct!r} lemma={lemma!r}")
    return direct


@dataclass
class OracleCheckReport:
    instances: int = 0
    violations: int = 0
    min_gap: float = float("inf")
    max_lemma_error: float = 0.0
    gaps: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self):
        return {
            "instances": self.instances,
            "violations": self.violations,
            "min_gap": self.min_gap,
            "max_lemma_error": self.max_lemma_error,
            "passed": self.passed,
        }


def check_policy_improvement(n_instances: int = 100, seed: int = 0, max_states: int = 10, max_actions: int = 5,
                             gamma: float = 0.9, tolerance: float = 1e-10) -> OracleCheckReport:
    """
    On random deterministic MDPs with random behaviour supports, the
    support-restricted greedy policy w.r.t. Q^beta never does worse than beta.
    """
    rng = np.random.default_rng(seed)
    report = OracleCheckReport()
    for _ in range(n_instances):
        n_states = int(rng.integers(2, max_states + 1))
        n_actions = int(rng.integers(1, max_actions + 1))
        mdp = random_tabular_mdp(n_states, n_actions, rng, gamma=gamma)
        supports = random_supports(mdp, rng)
        beta = TabularPolicy.uniform_over(supports, n_actions)
        pi = supported_argmax_policy(mdp, solve_policy_values(mdp, beta), supports)

        gap = performance_gap(mdp, pi, beta)
        occupancy = discounted_occupancy(mdp, pi)
        v_beta = solve_policy_values(mdp, beta)
        lemma = float(occupancy @ (np.sum(pi.probs * v_beta.q, axis=1) - v_beta.v) / (1.0 - gamma))

        report.instances += 1
        report.gaps.append(gap)
        report.min_gap = min(report.min_gap, gap)
        report.max_lemma_error = max(report.max_lemma_error, abs(gap - lemma))
        if gap < -tolerance:
            report.violations += 1
    return report
