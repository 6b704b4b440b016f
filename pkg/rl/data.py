"""
Offline datasets: representation, on-disk format, batch sampling and the
generators for the toy path task and for tabular MDPs.
"""

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from rl.envs import ToyPathEnv, polyline_length, toy_step
from utils.errors import DatasetParseError, DatasetValidationError

DATASET_FORMAT = "ppl-offline-dataset"


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass(frozen=True, eq=False)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


class OfflineDataset:
    """
    Immutable set of transitions stored column-wise, plus the action box and
    provenance metadata (generator name, parameters, seed).
    """

    def __init__(self, states: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                 next_states: np.ndarray, dones: np.ndarray,
                 action_low: Sequence[float], action_high: Sequence[float],
                 metadata: Optional[Dict[str, Any]] = None):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        dones = np.asarray(dones, dtype=bool).reshape(-1)
        n = states.shape[0]

        if n == 0 or states.size == 0:
            raise DatasetValidationError("dataset must contain at least one transition")
        if actions.shape[0] != n or next_states.shape[0] != n or rewards.shape[0] != n or dones.shape[0] != n:
            raise DatasetValidationError(
                f"column lengths differ: states={n}, actions={actions.shape[0]}, rewards={rewards.shape[0]}, "
                f"next_states={next_states.shape[0]}, dones={dones.shape[0]}"
            )
        if next_states.shape[1] != states.shape[1]:
            raise DatasetValidationError(f"state dim {states.shape[1]} != next-state dim {next_states.shape[1]}")
        for name, column in (("states", states), ("actions", actions), ("rewards", rewards),
                             ("next_states", next_states)):
            if not np.all(np.isfinite(column)):
                raise DatasetValidationError(f"{name} contain non-finite values")

        low = np.asarray(action_low, dtype=np.float64).reshape(-1)
        high = np.asarray(action_high, dtype=np.float64).reshape(-1)
        if low.shape != (actions.shape[1],) or high.shape != (actions.shape[1],) or np.any(low > high):
            raise DatasetValidationError(f"action bounds {low.tolist()}/{high.tolist()} do not fit action dim {actions.shape[1]}")
        outside = np.where(np.any((actions < low) | (actions > high), axis=1))[0]
        if outside.size:
            raise DatasetValidationError(f"transition {int(outside[0])} has an action outside [{low.tolist()}, {high.tolist()}]")

        self.states = _frozen(states)
        self.actions = _frozen(actions)
        self.rewards = _frozen(rewards)
        self.next_states = _frozen(next_states)
        self.dones = np.array(dones)
        self.dones.setflags(write=False)
        self.action_low = _frozen(low)
        self.action_high = _frozen(high)
        self.metadata: Dict[str, Any] = json.loads(json.dumps(metadata or {}))

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], action_low: Sequence[float],
                         action_high: Sequence[float], metadata: Optional[Dict[str, Any]] = None) -> "OfflineDataset":
        if not transitions:
            raise DatasetValidationError("dataset must contain at least one transition")
        return cls(
            states=np.array([t.state for t in transitions]),
            actions=np.array([np.atleast_1d(t.action) for t in transitions]),
            rewards=np.array([t.reward for t in transitions]),
            next_states=np.array([t.next_state for t in transitions]),
            dones=np.array([t.done for t in transitions]),
            action_low=action_low,
            action_high=action_high,
            metadata=metadata,
        )

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def action_dim(self) -> int:
        return int(self.actions.shape[1])

    @property
    def transitions(self) -> List[Transition]:
        return [
            Transition(self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i], bool(self.dones[i]))
            for i in range(len(self))
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (
            all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in (
                    (self.states, other.states), (self.actions, other.actions), (self.rewards, other.rewards),
                    (self.next_states, other.next_states), (self.dones, other.dones),
                    (self.action_low, other.action_low), (self.action_high, other.action_high),
                )
            )
            and self.metadata == other.metadata
        )

    __hash__ = None  # type: ignore[assignment]

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(
            states=self.states[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices].reshape(-1, 1),
            next_states=self.next_states[indices],
            dones=self.dones[indices].astype(np.float64).reshape(-1, 1),
        )

    def full_batch(self) -> Batch:
        return self.batch(np.arange(len(self)))


def sample_batch(ds: OfflineDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sample with replacement; deterministic given the generator state."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(ds) == 0:
        raise DatasetValidationError("cannot sample from an empty dataset")
    return ds.batch(rng.integers(0, len(ds), size=batch_size))


def save_dataset(ds: OfflineDataset, path: str) -> None:
    """
    JSON lines: one header line, then one transition per line. Python's float
    repr is the shortest round-tripping decimal, so floats survive bit-exactly.
    """
    header = {
        "format": DATASET_FORMAT,
        "count": len(ds),
        "state_dim": ds.state_dim,
        "action_dim": ds.action_dim,
        "action_low": ds.action_low.tolist(),
        "action_high": ds.action_high.tolist(),
        "metadata": ds.metadata,
    }
    with open(path, "w", encoding="utf-8") as file:
        file.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(ds)):
            row = {
                "s": ds.states[i].tolist(),
                "a": ds.actions[i].tolist(),
                "r": float(ds.rewards[i]),
                "s2": ds.next_states[i].tolist(),
                "d": bool(ds.dones[i]),
            }
            file.write(json.dumps(row) + "\n")


def load_dataset(path: str) -> OfflineDataset:
    with open(path, "r", encoding="utf-8") as file:
        lines = file.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError(path, 1, "empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetParseError(path, 1, f"header is not JSON: {e.msg}")
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetParseError(path, 1, f"header does not declare format {DATASET_FORMAT!r}")
    for key in ("count", "state_dim", "action_dim", "action_low", "action_high"):
        if key not in header:
            raise DatasetParseError(path, 1, f"header misses {key!r}")

    state_dim, action_dim = int(header["state_dim"]), int(header["action_dim"])
    states, actions, rewards, next_states, dones = [], [], [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            s, a, s2 = row["s"], row["a"], row["s2"]
            r, d = float(row["r"]), row["d"]
        except json.JSONDecodeError as e:
            raise DatasetParseError(path, line_no, f"invalid JSON: {e.msg}")
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetParseError(path, line_no, f"malformed transition: {e!r}")
        if len(s) != state_dim or len(s2) != state_dim or len(a) != action_dim or not isinstance(d, bool):
            raise DatasetParseError(path, line_no, "transition does not match header dims")
        states.append(s)
        actions.append(a)
        rewards.append(r)
        next_states.append(s2)
        dones.append(d)

    if len(states) != int(header["count"]):
        raise DatasetParseError(path, len(lines) + 1, f"expected {header['count']} transitions, found {len(states)}")

    return OfflineDataset(
        states=np.array(states, dtype=np.float64).reshape(-1, state_dim),
        actions=np.array(actions, dtype=np.float64).reshape(-1, action_dim),
        rewards=np.array(rewards, dtype=np.float64),
        next_states=np.array(next_states, dtype=np.float64).reshape(-1, state_dim),
        dones=np.array(dones, dtype=bool),
        action_low=header["action_low"],
        action_high=header["action_high"],
        metadata=header.get("metadata", {}),
    )


# --- toy path -------------------------------------------------------------

@dataclass(frozen=True)
class ToyPathConfig:
    n_points: int = 50
    x_start: float = -1.3
    x_end: float = 0.0
    arc_amplitude: float = 0.6
    wave_amplitude: float = 0.5
    action_noise: float = 0.01
    gamma: float = 0.99
    repeats: int = 1

    def __post_init__(self):
        if self.n_points < 3 or not self.x_start < self.x_end:
            raise ValueError(f"invalid toy grid: {self.n_points} points on [{self.x_start}, {self.x_end}]")
        if self.action_noise < 0 or self.repeats < 1:
            raise ValueError("action_noise must be >= 0 and repeats >= 1")

    def env(self) -> ToyPathEnv:
        return ToyPathEnv.default(self.n_points, self.x_start, self.x_end, self.gamma)


def toy_expert_curves(config: ToyPathConfig) -> List[np.ndarray]:
    """
    y-values of the three behaviour trajectories on the grid. Each expert is
    on the straight line over a different part of the range; the first two
    meet on the line at the middle grid column.
    """
    grid = np.linspace(config.x_start, config.x_end, config.n_points)
    width = config.x_end - config.x_start
    u = grid - config.x_start
    mid = (config.n_points - 1) // 2
    first = np.arange(config.n_points) <= mid
    split = u[mid]

    upper_then_flat = np.where(first, config.arc_amplitude * np.sin(np.pi * u / split), 0.0)
    flat_then_lower = np.where(first, 0.0, -config.arc_amplitude * np.sin(np.pi * (u - split) / (width - split)))
    full_wave = config.wave_amplitude * np.sin(2.0 * np.pi * u / width)
    curves = [upper_then_flat, flat_then_lower, full_wave]
    for curve in curves:
        # endpoints are S_0 and S_T exactly
        curve[0] = 0.0
        curve[-1] = 0.0
    upper_then_flat[mid] = 0.0
    return curves


def stitched_curve(curves: Sequence[np.ndarray]) -> np.ndarray:
    """Per grid column, the expert y closest to the straight line."""
    stacked = np.vstack(curves)
    return stacked[np.argmin(np.abs(stacked), axis=0), np.arange(stacked.shape[1])]


def generate_toy_path_dataset(config: Optional[ToyPathConfig] = None, seed: int = 0) -> OfflineDataset:
    """
    Execute every expert through the tick dynamics of ToyPathEnv, with
    Gaussian noise on the commanded y. Only the tick entering S_T is rewarded.
    """
    config = config or ToyPathConfig()
    rng = np.random.default_rng(seed)
    env = config.env()
    curves = toy_expert_curves(config)

    transitions: List[Transition] = []
    lengths: List[int] = []
    for _ in range(config.repeats):
        for curve in curves:
            position = env.start
            steps = 0
            for _ in range(env.max_steps):
                idx = int(np.searchsorted(env.x_grid, position[0] + 1e-9, side="right"))
                aim = curve[idx] if idx < len(curve) else 0.0
                action = float(np.clip(aim + config.action_noise * rng.standard_normal(), env.y_low, env.y_high))
                outcome = toy_step(env, position, action)
                transitions.append(Transition(position, np.array([action]), outcome.reward,
                                              outcome.next_state, outcome.done))
                position = outcome.next_state
                steps += 1
                if outcome.done:
                    break
            lengths.append(steps)

    metadata = {
        "generator": "toy_path",
        "params": asdict(config),
        "seed": seed,
        "x_grid": env.x_grid.tolist(),
        "experts": [c.tolist() for c in curves],
        "trajectory_lengths": lengths,
    }
    return OfflineDataset.from_transitions(transitions, env.action_low, env.action_high, metadata)


def expert_arc_lengths(config: Optional[ToyPathConfig] = None) -> Tuple[List[float], float]:
    """Arc lengths of the three experts and of their pointwise stitching."""
    config = config or ToyPathConfig()
    grid = np.linspace(config.x_start, config.x_end, config.n_points)
    curves = toy_expert_curves(config)
    return [polyline_length(grid, c) for c in curves], polyline_length(grid, stitched_curve(curves))


# --- tabular --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TabularMdp:
    """
    Finite MDP with deterministic transitions. Terminal states loop onto
    themselves with zero reward.
    """

    n_states: int
    n_actions: int
    next_state: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal_states: FrozenSet[int] = field(default_factory=frozenset)
    start_state: int = 0

    def __post_init__(self):
        next_state = np.asarray(self.next_state, dtype=np.int64)
        reward = np.asarray(self.reward, dtype=np.float64)
        object.__setattr__(self, "next_state", next_state)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "terminal_states", frozenset(int(s) for s in self.terminal_states))
        shape = (self.n_states, self.n_actions)
        if next_state.shape != shape or reward.shape != shape:
            raise ValueError(f"tables must have shape {shape}, got {next_state.shape} and {reward.shape}")
        if np.any(next_state < 0) or np.any(next_state >= self.n_states):
            raise ValueError("transition table points outside the state space")
        if not np.all(np.isfinite(reward)):
            raise ValueError("reward table contains non-finite values")
        # gamma = 0 is admitted: values collapse to immediate rewards
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.start_state < self.n_states:
            raise ValueError(f"start state {self.start_state} outside the state space")
        for s in self.terminal_states:
            if np.any(next_state[s] != s) or np.any(reward[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")

    @property
    def nonterminal_states(self) -> List[int]:
        return [s for s in range(self.n_states) if s not in self.terminal_states]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "next_state": self.next_state.tolist(),
            "reward": self.reward.tolist(),
            "gamma": self.gamma,
            "terminal_states": sorted(self.terminal_states),
            "start_state": self.start_state,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TabularMdp":
        return cls(
            n_states=int(data["n_states"]),
            n_actions=int(data["n_actions"]),
            next_state=np.array(data["next_state"]),
            reward=np.array(data["reward"]),
            gamma=float(data["gamma"]),
            terminal_states=frozenset(data["terminal_states"]),
            start_state=int(data.get("start_state", 0)),
        )


Supports = List[List[int]]


def random_tabular_mdp(n_states: int, n_actions: int, rng: np.random.Generator,
                       gamma: float = 0.9, n_terminal: int = 1) -> TabularMdp:
    """Random deterministic MDP; the last ``n_terminal`` states are absorbing."""
    if n_states < 2 or n_actions < 1 or not 0 <= n_terminal < n_states:
        raise ValueError(f"cannot build an MDP with {n_states} states, {n_actions} actions, {n_terminal} terminals")
    next_state = rng.integers(0, n_states, size=(n_states, n_actions))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    terminals = set(range(n_states - n_terminal, n_states))
    for s in terminals:
        next_state[s] = s
        reward[s] = 0.0
    return TabularMdp(n_states, n_actions, next_state, reward, gamma, frozenset(terminals), 0)


def random_supports(mdp: TabularMdp, rng: np.random.Generator, max_size: Optional[int] = None) -> Supports:
    """A random nonempty action subset for every state."""
    max_size = max_size or mdp.n_actions
    supports: Supports = []
    for _ in range(mdp.n_states):
        size = int(rng.integers(1, max_size + 1))
        supports.append(sorted(int(a) for a in rng.choice(mdp.n_actions, size=size, replace=False)))
    return supports


# Action semantics of the stitching chain
STAY, ADVANCE, SKIP, RETREAT = 0, 1, 2, 3


def stitching_mdp(gamma: float = 0.9) -> Tuple[TabularMdp, List[int], List[int]]:
    """
    Eight-state chain, state 7 terminal, reward 1 on entering it.
    Actions: stay, advance one, skip ahead two, step back one.

    Expert A skips on states 0-3 and crawls on 4-6; expert B does the
    opposite. Each is optimal on half the chain; skipping everywhere is
    strictly better than either.
    """
    n_states, n_actions, terminal = 8, 4, 7
    next_state = np.zeros((n_states, n_actions), dtype=np.int64)
    reward = np.zeros((n_states, n_actions))
    for s in range(n_states):
        if s == terminal:
            next_state[s] = s
            continue
        moves = {STAY: s, ADVANCE: s + 1, SKIP: s + 2, RETREAT: max(s - 1, 0)}
        for a, nxt in moves.items():
            nxt = min(nxt, terminal)
            next_state[s, a] = nxt
            reward[s, a] = 1.0 if nxt == terminal else 0.0
    mdp = TabularMdp(n_states, n_actions, next_state, reward, gamma, frozenset({terminal}), 0)
    expert_a = [SKIP if s <= 3 else ADVANCE for s in range(n_states)]
    expert_b = [ADVANCE if s <= 3 else SKIP for s in range(n_states)]
    return mdp, expert_a, expert_b


def one_hot(index: int, size: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[int(index)] = 1.0
    return vec


def _terminal_reachable(mdp: TabularMdp, supports: Supports) -> bool:
    if not mdp.terminal_states:
        return False
    seen = {mdp.start_state}
    queue = deque([mdp.start_state])
    while queue:
        s = queue.popleft()
        if s in mdp.terminal_states:
            return True
        for a in supports[s]:
            nxt = int(mdp.next_state[s, a])
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def generate_tabular_dataset(mdp: TabularMdp, supports: Supports, episodes: int, seed: int = 0,
                             horizon: Optional[int] = None) -> OfflineDataset:
    """
    Roll out the behaviour policy (uniform over each state's support) with
    exploring starts. Episode k starts at the (k mod n)-th non-terminal state
    and its first action cycles through that state's support, so every
    support pair is covered once ``episodes >= n_nonterminal * max|support|``.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    if len(supports) != mdp.n_states:
        raise ValueError(f"need one support per state, got {len(supports)} for {mdp.n_states} states")
    for s, support in enumerate(supports):
        if not support:
            raise ValueError(f"behaviour support of state {s} is empty")
        if any(not 0 <= a < mdp.n_actions for a in support):
            raise ValueError(f"behaviour support of state {s} names an unknown action")

    rng = np.random.default_rng(seed)
    horizon = horizon or 2 * mdp.n_states
    starts = mdp.nonterminal_states
    if not starts:
        raise ValueError("MDP has no non-terminal state to start from")

    transitions: List[Transition] = []
    state_indices: List[int] = []
    action_indices: List[int] = []
    for k in range(episodes):
        s = starts[k % len(starts)]
        round_robin = k // len(starts)
        for t in range(horizon):
            support = supports[s]
            a = support[round_robin % len(support)] if t == 0 else support[int(rng.integers(len(support)))]
            nxt = int(mdp.next_state[s, a])
            done = nxt in mdp.terminal_states
            transitions.append(Transition(one_hot(s, mdp.n_states), one_hot(a, mdp.n_actions),
                                          float(mdp.reward[s, a]), one_hot(nxt, mdp.n_states), done))
            state_indices.append(s)
            action_indices.append(a)
            if done:
                break
            s = nxt

    warnings: List[str] = []
    if not _terminal_reachable(mdp, supports):
        warnings.append("terminal state unreachable from the start state under the behaviour support")
    metadata = {
        "generator": "tabular",
        "params": {"episodes": episodes, "horizon": horizon, "supports": supports},
        "seed": seed,
        "mdp": mdp.to_dict(),
        "state_indices": state_indices,
        "action_indices": action_indices,
        "warnings": warnings,
    }
    return OfflineDataset.from_transitions(transitions, np.zeros(mdp.n_actions), np.ones(mdp.n_actions), metadata)


class EmpiricalBehavior:
    """
    The behaviour policy as recorded in the data: for a state seen in the
    dataset, return one of its recorded actions uniformly at random; defer to
    ``fallback`` for unseen states.

    With ``radius > 0`` the draw pools the actions of every dataset state
    within that Euclidean distance, so trajectories that pass through nearly
    the same state bootstrap through each other.
    """

    def __init__(self, ds: OfflineDataset, rng: np.random.Generator,
                 fallback: Optional[Callable[[np.ndarray], np.ndarray]] = None, radius: float = 0.0):
        if radius < 0:
            raise ValueError(f"radius must be >= 0, got {radius}")
        self.rng = rng
        self.fallback = fallback
        self.radius = radius
        self._actions: Dict[bytes, List[int]] = {}
        for i in range(len(ds)):
            self._actions.setdefault(ds.states[i].tobytes(), []).append(i)
        self._keys = list(self._actions)
        self._unique_states = np.array([ds.states[rows[0]] for rows in self._actions.values()]).reshape(-1, ds.state_dim)
        self._table = ds.actions
        self.action_dim = ds.action_dim

    def _candidate_rows(self, states: np.ndarray) -> List[Optional[List[int]]]:
        if self.radius == 0.0:
            return [self._actions.get(np.ascontiguousarray(s, dtype=np.float64).tobytes()) for s in states]
        dist = np.sqrt(np.sum((states[:, None, :] - self._unique_states[None, :, :]) ** 2, axis=2))
        pools: List[Optional[List[int]]] = []
        for near in dist <= self.radius:
            rows = [i for k in np.flatnonzero(near) for i in self._actions[self._keys[k]]]
            pools.append(rows or None)
        return pools

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        out = np.empty((states.shape[0], self.action_dim))
        missing = []
        for row, rows in enumerate(self._candidate_rows(states)):
            if rows is None:
                missing.append(row)
            else:
                out[row] = self._table[rows[int(self.rng.integers(len(rows)))]]
        if missing:
            if self.fallback is None:
                raise KeyError(f"{len(missing)} states are not in the dataset and no fallback policy is set")
            out[missing] = self.fallback(states[missing])
        return out

    def actions_at(self, state: np.ndarray) -> np.ndarray:
        rows = self._actions.get(np.ascontiguousarray(state, dtype=np.float64).tobytes(), [])
        return self._table[rows]
