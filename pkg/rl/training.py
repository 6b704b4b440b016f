"""
Training procedures: behaviour cloning, Bellman critic training with an
optional conservative penalty, the partial-policy-learning potential and
policy updates, the full training loop and the Q+BC baseline.

The critic plays the (negated) transport cost, the policy the transport map
and the nonnegative potential the dual variable of the partial constraint
``pi_# mu <= w * nu``.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from rl.autodiff import AdamState, Tensor, adam_step, add, backward, mean, scalar_mul, square, sub
from rl.data import Batch, EmpiricalBehavior, OfflineDataset, sample_batch
from rl.nets import (
    TOY_HIDDEN_SIZES,
    NetConfig,
    Network,
    critic_config,
    critic_forward,
    policy_config,
    policy_forward,
    potential_config,
    potential_forward,
)
from utils.errors import NonFiniteError, TrainingError
from utils.logger import PPLLogger

ActionSource = Union[Network, Callable[[np.ndarray], np.ndarray]]
EvalHook = Callable[[str, int, Network], None]


class TrainMode(str, Enum):
    ONE_STEP = "one-step"
    JOINT = "joint"


@dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters of a training run.

    one-step: BC pretraining of beta, ``steps_critic`` updates of Q^beta, then
        ``steps_ppl`` rounds of potential/policy updates against the frozen Q.
    joint: optional BC initialisation of pi, then ``steps_ppl`` iterations of
        critic -> potential -> policy on one shared batch; ``steps_critic`` is
        not used.
    """

    w: float = 8.0
    gamma: float = 0.99
    lr_policy: float = 1e-3
    lr_critic: float = 1e-3
    lr_potential: float = 1e-3
    batch_size: int = 256
    steps_bc: int = 20_000
    steps_critic: int = 50_000
    steps_ppl: int = 10_000
    mode: TrainMode = TrainMode.ONE_STEP
    conservative_coef: float = 1.0
    polyak_tau: float = 0.005
    behavior_radius: float = 0.0
    seed: int = 0
    hidden_sizes: Tuple[int, ...] = TOY_HIDDEN_SIZES
    bc_weight: float = 1.0
    log_every: int = 100
    eval_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode(self.mode))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.w >= 1.0:
            raise ValueError(f"w must be >= 1, got {self.w}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("steps_bc", "steps_critic", "steps_ppl", "eval_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("lr_policy", "lr_critic", "lr_potential", "conservative_coef", "bc_weight", "behavior_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1 or self.log_every < 1:
            raise ValueError("batch_size and log_every must be >= 1")
        if not 0.0 <= self.polyak_tau <= 1.0:
            raise ValueError(f"polyak_tau must lie in [0, 1], got {self.polyak_tau}")

    @classmethod
    def toy(cls, **overrides: Any) -> "TrainConfig":
        """
        Toy shortest-path setup: one 32-unit layer, 5000 steps per network.
        Bootstrap actions pool over dataset states within 0.04 and the target
        network tracks Q at tau 0.05.
        """
        base = dict(steps_bc=5000, steps_critic=5000, steps_ppl=5000, conservative_coef=0.0,
                    hidden_sizes=TOY_HIDDEN_SIZES, gamma=0.99, w=8.0, polyak_tau=0.05, behavior_radius=0.04)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes: Any) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["hidden_sizes"] = list(self.hidden_sizes)
        return data


@dataclass(frozen=True)
class TrainRecord:
    step: int
    phase: str
    critic_loss: float = 0.0
    potential_objective: float = 0.0
    policy_objective: float = 0.0
    mean_f_data: float = 0.0
    mean_f_policy: float = 0.0
    mean_q_policy: float = 0.0


_RECORD_FIELDS = [f.name for f in fields(TrainRecord)]


class TrainLog:
    """Logged training steps, in order. Serialises to CSV."""

    def __init__(self, records: Optional[Sequence[TrainRecord]] = None):
        self.records: List[TrainRecord] = []
        for record in records or []:
            self.append(record)

    def append(self, record: TrainRecord) -> None:
        values = [getattr(record, name) for name in _RECORD_FIELDS[2:]]
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteError("train_log", f"{record.phase} step {record.step}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TrainRecord]:
        return iter(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrainLog):
            return NotImplemented
        return self.records == other.records

    def phase(self, name: str) -> List[TrainRecord]:
        return [r for r in self.records if r.phase == name]

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(_RECORD_FIELDS)
        for record in self.records:
            writer.writerow([record.step, record.phase] + [repr(float(getattr(record, n))) for n in _RECORD_FIELDS[2:]])
        return buffer.getvalue()

    def save_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as file:
            file.write(self.to_csv_text())

    @classmethod
    def load_csv(cls, path: str) -> "TrainLog":
        with open(path, "r", encoding="utf-8", newline="") as file:
            rows = list(csv.DictReader(file))
        return cls([
            TrainRecord(step=int(row["step"]), phase=row["phase"],
                        **{name: float(row[name]) for name in _RECORD_FIELDS[2:]})
            for row in rows
        ])


class TrainResult(NamedTuple):
    policy: Network
    critic: Network
    potential: Network
    log: TrainLog
    behavior: Network


# --- objectives -------------------------------------------------------------

def potential_loss(f_policy: Tensor, f_data: Tensor, w: float) -> Tensor:
    """L_f = -mean f(s, pi(s)) + w * mean f(s, a_data)."""
    return add(scalar_mul(mean(f_policy), -1.0), scalar_mul(mean(f_data), w))


def policy_loss(q_policy: Tensor, f_policy: Optional[Tensor] = None) -> Tensor:
    """L_pi = mean(-Q(s, pi(s)) + f(s, pi(s)))."""
    loss = scalar_mul(mean(q_policy), -1.0)
    return loss if f_policy is None else add(loss, mean(f_policy))


def _act(source: ActionSource, states: np.ndarray) -> np.ndarray:
    if isinstance(source, Network):
        return source.predict(states)
    return np.asarray(source(states), dtype=np.float64)


def q_values(q_net: Network, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return critic_forward(q_net, states, actions, trainable=False).values


def f_values(f_net: Network, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return potential_forward(f_net, states, actions, trainable=False).values


def _apply(net: Network, loss: Tensor, optimizer: AdamState) -> float:
    net.zero_grad()
    backward(loss)
    adam_step(net.params, net.grads(), optimizer)
    return loss.item()


# --- updates ----------------------------------------------------------------

def conservative_penalty(q_net: Network, policy: ActionSource, batch: Batch, coef: float) -> Tensor:
    """coef * (mean Q(s, policy(s)) - mean Q(s, a_data)); the policy side is held constant."""
    if coef < 0:
        raise ValueError(f"conservative coefficient must be >= 0, got {coef}")
    q_policy = critic_forward(q_net, batch.states, _act(policy, batch.states))
    q_data = critic_forward(q_net, batch.states, batch.actions)
    return scalar_mul(sub(mean(q_policy), mean(q_data)), coef)


def critic_bellman_update(q_net: Network, target_net: Network, bootstrap: ActionSource, batch: Batch,
                          gamma: float, optimizer: AdamState, tau: float = 0.005,
                          penalty_policy: Optional[ActionSource] = None, conservative_coef: float = 0.0) -> float:
    """
    One Adam step on mean (Q(s,a) - y)^2, y = r + gamma (1 - done) Q_target(s', a'),
    a' drawn from ``bootstrap``. The target is a constant within the step and is
    Polyak-averaged toward Q afterwards. Returns the loss before the step.
    """
    if len(batch) == 0:
        raise ValueError("critic update needs a nonempty batch")
    next_actions = _act(bootstrap, batch.next_states)
    target = batch.rewards + gamma * (1.0 - batch.dones) * q_values(target_net, batch.next_states, next_actions)

    q = critic_forward(q_net, batch.states, batch.actions)
    loss = mean(square(sub(q, Tensor.constant(target))))
    if penalty_policy is not None and conservative_coef > 0.0:
        loss = add(loss, conservative_penalty(q_net, penalty_policy, batch, conservative_coef))

    value = _apply(q_net, loss, optimizer)
    target_net.soft_update(q_net, tau)
    return value


def potential_update(f_net: Network, policy: ActionSource, batch: Batch, w: float, optimizer: AdamState) -> float:
    """One Adam step on L_f. Policy actions enter as constants."""
    if not w >= 1.0:
        raise ValueError(f"w must be >= 1, got {w}")
    f_policy = potential_forward(f_net, batch.states, _act(policy, batch.states))
    f_data = potential_forward(f_net, batch.states, batch.actions)
    return _apply(f_net, potential_loss(f_policy, f_data, w), optimizer)


def policy_update(policy: Network, q_net: Network, f_net: Optional[Network], batch: Batch,
                  optimizer: AdamState) -> float:
    """One Adam step on L_pi. Q and f are frozen; gradients reach only the policy."""
    actions = policy_forward(policy, batch.states)
    q = critic_forward(q_net, batch.states, actions, trainable=False)
    f = None if f_net is None else potential_forward(f_net, batch.states, actions, trainable=False)
    return _apply(policy, policy_loss(q, f), optimizer)


def _fit_policy(policy: Network, ds: OfflineDataset, steps: int, optimizer: AdamState, rng: np.random.Generator,
                batch_size: int, q_net: Optional[Network], bc_weight: float, phase: str,
                log: Optional[TrainLog], logger: Optional[PPLLogger], log_every: int) -> Network:
    """mean(-Q(s, pi(s))) + bc_weight * mean ||pi(s) - a||^2, the Q term dropped when q_net is None."""
    action_dim = ds.action_dim
    for step in range(1, steps + 1):
        batch = sample_batch(ds, batch_size, rng)
        actions = policy_forward(policy, batch.states)
        loss = scalar_mul(mean(square(sub(actions, Tensor.constant(batch.actions)))), bc_weight * action_dim)
        if q_net is not None:
            loss = add(scalar_mul(mean(critic_forward(q_net, batch.states, actions, trainable=False)), -1.0), loss)
        value = _apply(policy, loss, optimizer)
        if step % log_every == 0 or step == steps:
            if log is not None:
                log.append(TrainRecord(step=step, phase=phase, policy_objective=value))
            if logger is not None:
                logger.train_log(phase, step, policy_objective=value)
    return policy


def bc_pretrain(ds: OfflineDataset, net_config: NetConfig, steps: int, lr: float, seed: int = 0,
                batch_size: int = 256, log: Optional[TrainLog] = None, logger: Optional[PPLLogger] = None,
                log_every: int = 100) -> Network:
    """Behaviour cloning: minimise mean ||beta(s) - a||^2 over the dataset."""
    rng = np.random.default_rng(seed)
    beta = Network(net_config, rng, ds.action_low, ds.action_high)
    optimizer = AdamState.for_params(beta.params, lr=lr)
    return _fit_policy(beta, ds, steps, optimizer, rng, batch_size, None, 1.0, "bc", log, logger, log_every)


def qbc_baseline(ds: OfflineDataset, q_net: Network, net_config: NetConfig, steps: int, lr: float,
                 bc_weight: float = 1.0, seed: int = 0, batch_size: int = 256,
                 log: Optional[TrainLog] = None, logger: Optional[PPLLogger] = None,
                 log_every: int = 100) -> Network:
    """
    Q+BC: minimise mean(-Q(s, pi(s)) + bc_weight ||pi(s) - a||^2) with Q frozen.
    bc_weight = 0 maximises Q alone.
    """
    if bc_weight < 0:
        raise ValueError(f"bc_weight must be >= 0, got {bc_weight}")
    rng = np.random.default_rng(seed)
    policy = Network(net_config, rng, ds.action_low, ds.action_high)
    optimizer = AdamState.for_params(policy.params, lr=lr)
    return _fit_policy(policy, ds, steps, optimizer, rng, batch_size, q_net, bc_weight, "qbc", log, logger, log_every)


# --- full loop ----------------------------------------------------------------

def _diagnostics(policy: Network, q_net: Network, f_net: Network, batch: Batch) -> Dict[str, float]:
    actions = policy.predict(batch.states)
    return {
        "mean_f_data": float(np.mean(f_values(f_net, batch.states, batch.actions))),
        "mean_f_policy": float(np.mean(f_values(f_net, batch.states, actions))),
        "mean_q_policy": float(np.mean(q_values(q_net, batch.states, actions))),
    }


def _record(log: TrainLog, logger: PPLLogger, phase: str, step: int, policy: Network, q_net: Network,
            f_net: Network, batch: Batch, **losses: float) -> None:
    metrics = dict(losses, **_diagnostics(policy, q_net, f_net, batch))
    log.append(TrainRecord(step=step, phase=phase, **metrics))
    logger.train_log(phase, step, **metrics)


def train(ds: OfflineDataset, config: TrainConfig, logger: Optional[PPLLogger] = None,
          on_eval: Optional[EvalHook] = None) -> TrainResult:
    """
    Run a full training pipeline. Any numerical failure is re-raised as
    TrainingError carrying the records logged up to that point.
    """
    logger = logger or PPLLogger(log_dir=None)
    log = TrainLog()
    try:
        if config.mode == TrainMode.ONE_STEP:
            result = _train_one_step(ds, config, log, logger, on_eval)
        else:
            result = _train_joint(ds, config, log, logger, on_eval)
    except (FloatingPointError, ValueError) as e:
        logger.error(f"Training aborted after {len(log)} logged steps: {e}")
        raise TrainingError(f"training failed: {e}", log) from e
    logger.info(f"Training finished: mode={config.mode.value} w={config.w} records={len(log)}")
    return result


def _build_nets(ds: OfflineDataset, config: TrainConfig, rng: np.random.Generator) -> Tuple[Network, Network, Network]:
    q_net = Network(critic_config(ds.state_dim, ds.action_dim, config.hidden_sizes), rng)
    target = q_net.copy()
    f_net = Network(potential_config(ds.state_dim, ds.action_dim, config.hidden_sizes), rng)
    return q_net, target, f_net


def _maybe_eval(on_eval: Optional[EvalHook], config: TrainConfig, phase: str, step: int, policy: Network) -> None:
    if on_eval is not None and config.eval_every > 0 and step % config.eval_every == 0:
        on_eval(phase, step, policy)


def _train_one_step(ds: OfflineDataset, config: TrainConfig, log: TrainLog, logger: PPLLogger,
                    on_eval: Optional[EvalHook]) -> TrainResult:
    pi_config = policy_config(ds.state_dim, ds.action_dim, config.hidden_sizes)
    beta = bc_pretrain(ds, pi_config, config.steps_bc, config.lr_policy, config.seed, config.batch_size,
                       log=log, logger=logger, log_every=config.log_every)

    rng = np.random.default_rng([config.seed, 1])
    q_net, target, f_net = _build_nets(ds, config, rng)
    behavior = EmpiricalBehavior(ds, rng, fallback=beta.predict, radius=config.behavior_radius)
    low, high = ds.action_low, ds.action_high

    def random_actions(states: np.ndarray) -> np.ndarray:
        return rng.uniform(low, high, size=(states.shape[0], ds.action_dim))

    q_opt = AdamState.for_params(q_net.params, lr=config.lr_critic)
    for step in range(1, config.steps_critic + 1):
        batch = sample_batch(ds, config.batch_size, rng)
        loss = critic_bellman_update(q_net, target, behavior, batch, config.gamma, q_opt, config.polyak_tau,
                                     penalty_policy=random_actions, conservative_coef=config.conservative_coef)
        if step % config.log_every == 0 or step == config.steps_critic:
            _record(log, logger, "critic", step, beta, q_net, f_net, batch, critic_loss=loss)

    policy = beta.copy()
    pi_opt = AdamState.for_params(policy.params, lr=config.lr_policy)
    f_opt = AdamState.for_params(f_net.params, lr=config.lr_potential)
    for step in range(1, config.steps_ppl + 1):
        batch = sample_batch(ds, config.batch_size, rng)
        f_obj = potential_update(f_net, policy, batch, config.w, f_opt)
        pi_obj = policy_update(policy, q_net, f_net, batch, pi_opt)
        if step % config.log_every == 0 or step == config.steps_ppl:
            _record(log, logger, "ppl", step, policy, q_net, f_net, batch,
                    potential_objective=f_obj, policy_objective=pi_obj)
        _maybe_eval(on_eval, config, "ppl", step, policy)

    return TrainResult(policy, q_net, f_net, log, beta)


def _train_joint(ds: OfflineDataset, config: TrainConfig, log: TrainLog, logger: PPLLogger,
                 on_eval: Optional[EvalHook]) -> TrainResult:
    pi_config = policy_config(ds.state_dim, ds.action_dim, config.hidden_sizes)
    policy = bc_pretrain(ds, pi_config, config.steps_bc, config.lr_policy, config.seed, config.batch_size,
                         log=log, logger=logger, log_every=config.log_every)
    beta = policy.copy()

    rng = np.random.default_rng([config.seed, 1])
    q_net, target, f_net = _build_nets(ds, config, rng)
    q_opt = AdamState.for_params(q_net.params, lr=config.lr_critic)
    pi_opt = AdamState.for_params(policy.params, lr=config.lr_policy)
    f_opt = AdamState.for_params(f_net.params, lr=config.lr_potential)

    for step in range(1, config.steps_ppl + 1):
        # one batch feeds all three updates
        batch = sample_batch(ds, config.batch_size, rng)
        c_loss = critic_bellman_update(q_net, target, policy, batch, config.gamma, q_opt, config.polyak_tau,
                                       penalty_policy=policy, conservative_coef=config.conservative_coef)
        f_obj = potential_update(f_net, policy, batch, config.w, f_opt)
        pi_obj = policy_update(policy, q_net, f_net, batch, pi_opt)
        if step % config.log_every == 0 or step == config.steps_ppl:
            _record(log, logger, "joint", step, policy, q_net, f_net, batch,
                    critic_loss=c_loss, potential_objective=f_obj, policy_objective=pi_obj)
        _maybe_eval(on_eval, config, "joint", step, policy)

    return TrainResult(policy, q_net, f_net, log, beta)


# --- diagnostics ---------------------------------------------------------------

def nearest_dataset_action(actions: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Index of the nearest candidate (Euclidean) for each action row; ties go to the lower index."""
    actions = np.atleast_2d(actions)
    candidates = np.atleast_2d(candidates)
    dist = np.sum((actions[:, None, :] - candidates[None, :, :]) ** 2, axis=2)
    return np.argmin(dist, axis=1)


def tabular_supports(ds: OfflineDataset) -> Dict[int, List[int]]:
    """Dataset action indices observed per state index (one-hot datasets)."""
    states = np.argmax(ds.states, axis=1)
    actions = np.argmax(ds.actions, axis=1)
    support: Dict[int, set] = {}
    for s, a in zip(states.tolist(), actions.tolist()):
        support.setdefault(s, set()).add(a)
    return {s: sorted(acts) for s, acts in sorted(support.items())}


def selected_actions(policy: Network, ds: OfflineDataset) -> Dict[int, int]:
    """Per dataset state, the support action nearest to pi(s)."""
    eye_s, eye_a = np.eye(ds.state_dim), np.eye(ds.action_dim)
    choice: Dict[int, int] = {}
    for s, support in tabular_supports(ds).items():
        action = policy.predict(eye_s[s][None, :])
        choice[s] = support[int(nearest_dataset_action(action, eye_a[support])[0])]
    return choice


def covered_action_counts(policy: Network, ds: OfflineDataset, share: float = 0.5) -> Dict[int, int]:
    """
    Per state, the number of support actions receiving policy mass. The
    one-hot-space output pi(s) is read as mass over the support; an action
    counts when it holds at least ``share`` of its uniform portion, and the
    nearest-action choice always counts.
    """
    eye_s = np.eye(ds.state_dim)
    chosen = selected_actions(policy, ds)
    counts: Dict[int, int] = {}
    for s, support in tabular_supports(ds).items():
        mass = np.clip(policy.predict(eye_s[s][None, :])[0, support], 0.0, None)
        covered = {chosen[s]}
        if mass.sum() > 0.0:
            portion = mass / mass.sum()
            covered.update(a for a, m in zip(support, portion) if m >= share / len(support))
        counts[s] = len(covered)
    return counts


def potential_decile_means(q_net: Network, f_net: Network, ds: OfflineDataset) -> Tuple[float, float]:
    """Mean f over the dataset pairs in the top and in the bottom Q-decile."""
    q = q_values(q_net, ds.states, ds.actions).reshape(-1)
    f = f_values(f_net, ds.states, ds.actions).reshape(-1)
    order = np.argsort(q, kind="stable")
    k = max(1, len(order) // 10)
    return float(np.mean(f[order[-k:]])), float(np.mean(f[order[:k]]))


def selected_potential_means(policy: Network, f_net: Network, ds: OfflineDataset) -> Tuple[float, float]:
    """Mean f over distinct dataset (s, a) pairs selected by pi, and over the rest."""
    eye_s, eye_a = np.eye(ds.state_dim), np.eye(ds.action_dim)
    chosen = selected_actions(policy, ds)
    selected, unselected = [], []
    for s, support in tabular_supports(ds).items():
        for a in support:
            value = float(f_values(f_net, eye_s[s][None, :], eye_a[a][None, :])[0, 0])
            (selected if chosen[s] == a else unselected).append(value)
    if not unselected:
        return float(np.mean(selected)), float("nan")
    return float(np.mean(selected)), float(np.mean(unselected))
