"""
The three function approximators of partial policy learning.

policy     S -> A, tanh head rescaled to the action box (the transport map)
critic     S x A -> R (the transport cost, negated)
potential  S x A -> R_{>=0}, centred softplus head 2 log cosh(z / 2) (the dual
           variable, f >= 0 with its minimum 0 at z = 0)
"""

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rl.autodiff import Tensor, add, as_tensor, concat, matmul, relu, scalar_mul, softplus, tanh
from utils.errors import ShapeError

ArrayLike = Union[np.ndarray, Tensor]

CHECKPOINT_FORMAT = "ppl-net"
CHECKPOINT_VERSION = 1
_LOG4 = 2.0 * float(np.log(2.0))

TOY_HIDDEN_SIZES: Tuple[int, ...] = (32,)


class HeadKind(str, Enum):
    POLICY_TANH = "policy-tanh"
    SCALAR = "scalar"
    NONNEGATIVE_SCALAR = "nonnegative-scalar"


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_sizes: Tuple[int, ...]
    output_dim: int
    head: HeadKind

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "head", HeadKind(self.head))
        dims = [self.input_dim, self.output_dim, *self.hidden_sizes]
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"NetConfig dims must be >= 1, got {dims}")
        if self.head != HeadKind.POLICY_TANH and self.output_dim != 1:
            raise ValueError(f"{self.head.value} head must have output_dim 1, got {self.output_dim}")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "output_dim": self.output_dim,
            "head": self.head.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetConfig":
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_sizes=tuple(data["hidden_sizes"]),
            output_dim=int(data["output_dim"]),
            head=HeadKind(data["head"]),
        )


def policy_config(state_dim: int, action_dim: int, hidden_sizes: Sequence[int] = TOY_HIDDEN_SIZES) -> NetConfig:
    return NetConfig(state_dim, tuple(hidden_sizes), action_dim, HeadKind.POLICY_TANH)


def critic_config(state_dim: int, action_dim: int, hidden_sizes: Sequence[int] = TOY_HIDDEN_SIZES) -> NetConfig:
    return NetConfig(state_dim + action_dim, tuple(hidden_sizes), 1, HeadKind.SCALAR)


def potential_config(state_dim: int, action_dim: int, hidden_sizes: Sequence[int] = TOY_HIDDEN_SIZES) -> NetConfig:
    return NetConfig(state_dim + action_dim, tuple(hidden_sizes), 1, HeadKind.NONNEGATIVE_SCALAR)


class Network:
    """
    ReLU MLP with a role-specific head.

    Weights are Glorot-uniform, biases zero. Policy networks additionally hold
    the action box; the tanh output is mapped affinely onto it, so bounds hold
    by construction.
    """

    def __init__(self, config: NetConfig, rng: Optional[np.random.Generator] = None,
                 action_low: Optional[Sequence[float]] = None, action_high: Optional[Sequence[float]] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)

        self.params: List[Tensor] = []
        sizes = config.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True))
            self.params.append(Tensor(np.zeros(fan_out), requires_grad=True))

        self.action_low: Optional[np.ndarray] = None
        self.action_high: Optional[np.ndarray] = None
        if config.head == HeadKind.POLICY_TANH:
            if action_low is None or action_high is None:
                action_low = -np.ones(config.output_dim)
                action_high = np.ones(config.output_dim)
            low = np.asarray(action_low, dtype=np.float64).reshape(-1)
            high = np.asarray(action_high, dtype=np.float64).reshape(-1)
            if low.shape != (config.output_dim,) or high.shape != (config.output_dim,) or np.any(high < low):
                raise ValueError(f"action bounds {low} / {high} do not fit output_dim {config.output_dim}")
            self.action_low, self.action_high = low, high
            self._scale = np.diag((high - low) / 2.0)
            self._offset = (high + low) / 2.0

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: ArrayLike, trainable: bool = True) -> Tensor:
        """
        Evaluate on a batch. With ``trainable=False`` the weights enter the
        graph as constants, so gradients only flow into the inputs.
        """
        h = as_tensor(x)
        if h.values.ndim != 2 or h.shape[1] != self.config.input_dim:
            raise ShapeError("forward", [h.shape, (None, self.config.input_dim)], "input dim mismatch")
        params = self.params if trainable else [Tensor.constant(p.values) for p in self.params]
        n_layers = len(params) // 2
        for i in range(n_layers):
            h = add(matmul(h, params[2 * i]), params[2 * i + 1])
            if i < n_layers - 1:
                h = relu(h)

        if self.config.head == HeadKind.POLICY_TANH:
            return add(matmul(tanh(h), Tensor.constant(self._scale)), Tensor.constant(self._offset))
        if self.config.head == HeadKind.NONNEGATIVE_SCALAR:
            both_sides = add(softplus(h), softplus(scalar_mul(h, -1.0)))
            centred = add(both_sides, Tensor.constant(np.full(self.config.output_dim, -_LOG4)))
            # clears rounding just below zero
            return relu(centred)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on plain arrays, no gradient bookkeeping."""
        return self.forward(np.atleast_2d(np.asarray(x, dtype=np.float64)), trainable=False).values

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grads(self) -> List[np.ndarray]:
        return [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]

    def zero_output_layer(self) -> None:
        """Zero the last weight matrix and bias (outputs become input-independent)."""
        self.params[-2].values[...] = 0.0
        self.params[-1].values[...] = 0.0

    def copy(self) -> "Network":
        clone = Network.__new__(Network)
        clone.config = self.config
        clone.params = [Tensor(p.values, requires_grad=True) for p in self.params]
        clone.action_low = None if self.action_low is None else self.action_low.copy()
        clone.action_high = None if self.action_high is None else self.action_high.copy()
        if self.config.head == HeadKind.POLICY_TANH:
            clone._scale = self._scale.copy()
            clone._offset = self._offset.copy()
        return clone

    def soft_update(self, source: "Network", tau: float) -> None:
        """Polyak averaging: self <- tau * source + (1 - tau) * self."""
        for target, online in zip(self.params, source.params):
            target.values *= 1.0 - tau
            target.values += tau * online.values

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.values.reshape(-1) for p in self.params])


def _check_head(net: Network, head: HeadKind, op: str) -> None:
    if net.config.head != head:
        raise ValueError(f"{op} needs a {head.value} network, got {net.config.head.value}")


def policy_forward(net: Network, states: ArrayLike, trainable: bool = True) -> Tensor:
    _check_head(net, HeadKind.POLICY_TANH, "policy_forward")
    return net.forward(states, trainable=trainable)


def critic_forward(net: Network, states: ArrayLike, actions: ArrayLike, trainable: bool = True) -> Tensor:
    _check_head(net, HeadKind.SCALAR, "critic_forward")
    return net.forward(_state_action(states, actions, "critic_forward"), trainable=trainable)


def potential_forward(net: Network, states: ArrayLike, actions: ArrayLike, trainable: bool = True) -> Tensor:
    _check_head(net, HeadKind.NONNEGATIVE_SCALAR, "potential_forward")
    return net.forward(_state_action(states, actions, "potential_forward"), trainable=trainable)


def _state_action(states: ArrayLike, actions: ArrayLike, op: str) -> Tensor:
    s, a = as_tensor(states), as_tensor(actions)
    if s.values.ndim != 2 or a.values.ndim != 2 or s.shape[0] != a.shape[0]:
        raise ShapeError(op, [s.shape, a.shape], "state/action batch mismatch")
    return concat([s, a], axis=1)


def save_checkpoint(net: Network, path: str) -> None:
    """
    One JSON header line, then the parameters as little-endian float64.
    """
    entries = []
    offset = 0
    for i, p in enumerate(net.params):
        entries.append({"name": f"{'W' if i % 2 == 0 else 'b'}{i // 2}", "shape": list(p.shape),
                        "offset": offset, "count": p.size})
        offset += p.size
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": net.config.to_dict(),
        "action_low": None if net.action_low is None else net.action_low.tolist(),
        "action_high": None if net.action_high is None else net.action_high.tolist(),
        "params": entries,
        "total": offset,
    }
    with open(path, "wb") as file:
        file.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        file.write(net.flat_parameters().astype("<f8").tobytes())


def load_checkpoint(path: str) -> Network:
    with open(path, "rb") as file:
        raw = file.read()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise ValueError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: unreadable checkpoint header: {e}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    flat = np.frombuffer(body, dtype="<f8")
    if flat.size != header["total"]:
        raise ValueError(f"{path}: expected {header['total']} floats, found {flat.size}")

    config = NetConfig.from_dict(header["config"])
    net = Network(config, action_low=header["action_low"], action_high=header["action_high"])
    for p, entry in zip(net.params, header["params"]):
        chunk = flat[entry["offset"]: entry["offset"] + entry["count"]]
        p.values[...] = chunk.reshape(entry["shape"])
    return net
