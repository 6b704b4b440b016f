"""
Executable environments for evaluating trained policies.

ToyPathEnv moves the agent at unit speed: every tick covers ``step_length`` of
arc toward the next waypoint and costs one discount factor, so a geometrically
shorter path earns a larger discounted return. A waypoint closer than
1.5 step lengths is reached in one tick, which rounds the tick count of a
segment to the nearest whole step.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple, Union

import numpy as np

if TYPE_CHECKING:
    from rl.data import TabularMdp

Policy = Callable[[np.ndarray], np.ndarray]

_GRID_EPS = 1e-9
_SNAP_EPS = 1e-12
_SNAP_STEPS = 1.5


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class ToyPathEnv:
    """
    Shortest-path task from S_0 = (x_0, 0) to S_T = (x_end, 0).

    The state is the current position (x, y); the action is the target y at
    the next grid column. Past the last column the waypoint is S_T itself.
    """

    x_grid: np.ndarray
    step_length: float
    gamma: float = 0.99
    y_low: float = -1.5
    y_high: float = 1.5
    target_tolerance: float = 0.0
    max_steps: int = 1000

    state_dim: int = field(default=2, init=False)
    action_dim: int = field(default=1, init=False)

    @classmethod
    def default(cls, n_points: int = 50, x_start: float = -1.3, x_end: float = 0.0,
                gamma: float = 0.99, max_steps: int = 1000) -> "ToyPathEnv":
        grid = np.linspace(x_start, x_end, n_points)
        spacing = float(grid[1] - grid[0])
        return cls(x_grid=grid, step_length=spacing, gamma=gamma,
                   target_tolerance=spacing / 2.0, max_steps=max_steps)

    @property
    def start(self) -> np.ndarray:
        return np.array([self.x_grid[0], 0.0])

    @property
    def target(self) -> np.ndarray:
        return np.array([self.x_grid[-1], 0.0])

    @property
    def action_low(self) -> np.ndarray:
        return np.array([self.y_low])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.y_high])

    def reset(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.start

    def observe(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=np.float64)

    def waypoint(self, position: np.ndarray, target_y: float) -> np.ndarray:
        idx = int(np.searchsorted(self.x_grid, position[0] + _GRID_EPS, side="right"))
        if idx >= len(self.x_grid):
            return self.target
        return np.array([self.x_grid[idx], target_y])

    def step(self, state: np.ndarray, action) -> StepOutcome:
        return toy_step(self, state, action)


def toy_step(env: ToyPathEnv, position: np.ndarray, target_y) -> StepOutcome:
    """
    Advance one tick. Out-of-range targets are clamped to the y-bounds and
    flagged rather than rejected.
    """
    position = np.asarray(position, dtype=np.float64).reshape(2)
    raw = float(np.asarray(target_y, dtype=np.float64).reshape(-1)[0])
    y = min(max(raw, env.y_low), env.y_high)
    clamped = y != raw

    waypoint = env.waypoint(position, y)
    delta = waypoint - position
    distance = float(np.hypot(delta[0], delta[1]))
    if distance <= _SNAP_STEPS * env.step_length + _SNAP_EPS:
        nxt = waypoint
    else:
        nxt = position + delta * (env.step_length / distance)

    reached = float(np.hypot(*(nxt - env.target))) < env.target_tolerance
    return StepOutcome(next_state=nxt, reward=1.0 if reached else 0.0, done=reached, clamped=clamped)


def polyline_length(xs: np.ndarray, ys: np.ndarray) -> float:
    """Arc length of the piecewise-linear curve through (xs[i], ys[i])."""
    return float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))


class TabularEnv:
    """
    Executes a deterministic TabularMdp. Observations are one-hot states.
    Continuous actions are mapped to the nearest one-hot action (argmax,
    lowest index on ties); integer actions are used as they are.
    """

    def __init__(self, mdp: "TabularMdp"):
        self.mdp = mdp
        self.gamma = mdp.gamma
        self.state_dim = mdp.n_states
        self.action_dim = mdp.n_actions
        self.max_steps = 10_000

    def reset(self, rng: Optional[np.random.Generator] = None) -> int:
        return int(self.mdp.start_state)

    def observe(self, state: int) -> np.ndarray:
        return np.eye(self.mdp.n_states)[int(state)]

    def action_index(self, action) -> int:
        arr = np.asarray(action)
        if arr.ndim == 0 and np.issubdtype(arr.dtype, np.integer):
            return int(arr)
        return int(np.argmax(arr.reshape(-1)))

    def step(self, state: int, action) -> StepOutcome:
        a = self.action_index(action)
        if not 0 <= a < self.mdp.n_actions:
            raise ValueError(f"action index {a} outside [0, {self.mdp.n_actions})")
        nxt = int(self.mdp.next_state[state, a])
        return StepOutcome(next_state=nxt, reward=float(self.mdp.reward[state, a]),
                           done=nxt in self.mdp.terminal_states)


Env = Union[ToyPathEnv, TabularEnv]


@dataclass
class RolloutResult:
    discounted_return: float
    undiscounted_return: float
    steps: int
    trajectory: List[Tuple[np.ndarray, np.ndarray]]
    rewards: List[float]
    reached_target: bool
    clamped: bool = False
    final_state: Optional[np.ndarray] = None

    def recomputed_return(self, gamma: float) -> float:
        return float(sum(r * gamma ** t for t, r in enumerate(self.rewards)))

    def positions(self) -> np.ndarray:
        states = [np.asarray(s, dtype=np.float64) for s, _ in self.trajectory]
        if self.final_state is not None:
            states.append(np.asarray(self.final_state, dtype=np.float64))
        return np.array(states)


def rollout(env: Env, policy: Policy, max_steps: Optional[int] = None, seed: int = 0) -> RolloutResult:
    """
    Run ``policy`` from the environment's start state until it terminates or
    ``max_steps`` ticks have elapsed.
    """
    rng = np.random.default_rng(seed)
    limit = env.max_steps if max_steps is None else max_steps
    state = env.reset(rng)
    trajectory: List[Tuple[np.ndarray, np.ndarray]] = []
    rewards: List[float] = []
    discounted = 0.0
    discount = 1.0
    reached = False
    clamped = False

    for _ in range(limit):
        obs = env.observe(state)
        action = np.asarray(policy(obs), dtype=np.float64).reshape(-1) if not isinstance(env, TabularEnv) \
            else np.asarray(policy(obs))
        outcome = env.step(state, action)
        trajectory.append((state, action))
        rewards.append(outcome.reward)
        discounted += discount * outcome.reward
        discount *= env.gamma
        clamped = clamped or outcome.clamped
        state = outcome.next_state
        if outcome.done:
            reached = True
            break

    return RolloutResult(
        discounted_return=discounted,
        undiscounted_return=float(sum(rewards)),
        steps=len(trajectory),
        trajectory=trajectory,
        rewards=rewards,
        reached_target=reached,
        clamped=clamped,
        final_state=state if trajectory else None,
    )


def straight_policy(obs: np.ndarray) -> np.ndarray:
    """Always aim at y = 0: the shortest path on the toy task."""
    return np.zeros(1)


def network_policy(net) -> Policy:
    """Adapt a policy network to the single-observation policy interface."""
    def act(obs: np.ndarray) -> np.ndarray:
        return net.predict(np.asarray(obs, dtype=np.float64)[None, :])[0]

    return act


def grid_deviation(env: ToyPathEnv, result: RolloutResult) -> float:
    """
    Mean |y| at the grid columns the rollout passed through (the distance from
    the straight line, measured where the path crosses each column).
    """
    positions = result.positions()
    if positions.size == 0:
        return 0.0
    ys = []
    for x in env.x_grid:
        hits = np.where(np.abs(positions[:, 0] - x) < _GRID_EPS)[0]
        if hits.size:
            ys.append(abs(positions[hits[0], 1]))
    return float(np.mean(ys)) if ys else 0.0
