"""
Dense float64 tensors with reverse-mode gradients and an Adam optimizer.

The primitive set is fixed: matmul, add, relu, tanh, softplus, square, mean,
scalar_mul and concat. Every forward value is checked for NaN/Inf so a broken
training step fails at the primitive that produced the bad number.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import NonFiniteError, ShapeError

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    A node of the computation graph.

    Leaves created by the user own a private copy of their values. Interior
    nodes remember their parents and a closure mapping the upstream gradient
    to one gradient per parent.
    """

    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf"):
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(op, "input contains NaN or Inf")
        self.values: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def constant(cls, values: np.ndarray) -> "Tensor":
        """Wrap an array without copying; never receives a gradient."""
        node = cls.__new__(cls)
        node.values = np.asarray(values, dtype=np.float64)
        node.grad = None
        node.requires_grad = False
        node.op = "const"
        node._parents = ()
        node._backward = None
        return node

    @classmethod
    def _result(cls, values: np.ndarray, op: str, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(op)
        node = cls.__new__(cls)
        node.values = values
        node.grad = None
        node.requires_grad = any(p.requires_grad for p in parents)
        node.op = op
        node._parents = tuple(parents)
        node._backward = backward if node.requires_grad else None
        return node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError("item", [self.shape], "tensor is not scalar")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    """Pass tensors through, wrap arrays as constants."""
    if isinstance(value, Tensor):
        return value
    return Tensor.constant(np.asarray(value, dtype=np.float64))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape])
    av, bv = a.values, b.values

    def backward(g: np.ndarray):
        return g @ bv.T, av.T @ g

    return Tensor._result(av @ bv, "matmul", (a, b), backward)


def _row_broadcastable(big: Tuple[int, ...], small: Tuple[int, ...]) -> bool:
    if len(big) != 2:
        return False
    return small == (big[1],) or small == (1, big[1])


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. A row vector may be added to every row of a matrix."""
    if a.shape == b.shape:
        def backward(g: np.ndarray):
            return g, g

        return Tensor._result(a.values + b.values, "add", (a, b), backward)

    if a.size == 1 and b.size == 1:
        a_shape, b_shape = a.shape, b.shape

        def backward_scalar(g: np.ndarray):
            return g.reshape(a_shape), g.reshape(b_shape)

        out = a.values.reshape(-1) + b.values.reshape(-1)
        shape = a_shape if len(a_shape) >= len(b_shape) else b_shape
        return Tensor._result(out.reshape(shape), "add", (a, b), backward_scalar)

    swapped = False
    if _row_broadcastable(b.shape, a.shape):
        a, b = b, a
        swapped = True
    if not _row_broadcastable(a.shape, b.shape):
        raise ShapeError("add", [a.shape, b.shape] if not swapped else [b.shape, a.shape])
    b_shape = b.shape

    def backward_rows(g: np.ndarray):
        gb = g.sum(axis=0).reshape(b_shape)
        return (gb, g) if swapped else (g, gb)

    out = a.values + b.values.reshape(1, -1)
    parents = (b, a) if swapped else (a, b)
    return Tensor._result(out, "add", parents, backward_rows)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0

    def backward(g: np.ndarray):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.values, 0.0), "relu", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)

    def backward(g: np.ndarray):
        return (g * (1.0 - out * out),)

    return Tensor._result(out, "tanh", (x,), backward)


def softplus(x: Tensor) -> Tensor:
    xv = x.values
    out = np.logaddexp(0.0, xv)

    def backward(g: np.ndarray):
        # sigmoid(x) = exp(-softplus(-x)), stable for both signs
        return (g * np.exp(-np.logaddexp(0.0, -xv)),)

    return Tensor._result(out, "softplus", (x,), backward)


def square(x: Tensor) -> Tensor:
    xv = x.values

    def backward(g: np.ndarray):
        return (2.0 * xv * g,)

    return Tensor._result(xv * xv, "square", (x,), backward)


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("mean", [x.shape], "empty tensor")
    n = x.size
    shape = x.shape

    def backward(g: np.ndarray):
        return (np.full(shape, float(g.reshape(-1)[0]) / n),)

    return Tensor._result(np.asarray(x.values.mean()), "mean", (x,), backward)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray):
        return (c * g,)

    return Tensor._result(c * x.values, "scalar_mul", (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat", [], "no operands")
    shapes = [t.shape for t in tensors]
    if any(len(s) != 2 for s in shapes) or len({s[0] for s in shapes}) != 1 or axis != 1:
        raise ShapeError("concat", shapes)
    widths = [s[1] for s in shapes]
    cuts = np.cumsum(widths)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, cuts, axis=1))

    out = np.concatenate([t.values for t in tensors], axis=1)
    return Tensor._result(out, "concat", tuple(tensors), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b, composed from add and scalar_mul."""
    return add(a, scalar_mul(b, -1.0))


def graph_eval(inputs: Sequence[Tensor], program: Callable[..., Tensor]) -> Tensor:
    """
    Run a program (any composition of the primitives) on the given inputs.

    The returned tensor carries the recorded graph, ready for ``backward``.
    """
    return program(*[as_tensor(t) for t in inputs])


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> List[Tensor]:
    """
    Reverse-mode sweep from a scalar loss.

    Sets ``grad`` on every leaf that requires a gradient and is reachable from
    the loss, overwriting earlier values. Returns those leaves.
    """
    if loss.values.size != 1 or loss.values.ndim > 1:
        raise ShapeError("backward", [loss.shape], "loss must be scalar")
    if not loss.requires_grad:
        return []

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    leaves: List[Tensor] = []
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("backward", f"gradient of {node.op}")
            node.grad = g
            leaves.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return leaves


def finite_difference_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to every entry of ``param``."""
    estimate = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    out = estimate.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = loss_fn().item()
        flat[i] = original - h
        lower = loss_fn().item()
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * h)
    return estimate


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray, eps: float = 1e-5) -> float:
    """Largest elementwise |g - g_fd| / max(eps, |g| + |g_fd|)."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(eps, np.abs(analytic) + np.abs(numeric))
    return float(np.max(diff / scale)) if diff.size else 0.0


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr < 0.0:
            raise ValueError(f"Invalid learning rate: {lr}")
        return cls(
            first_moment=[np.zeros_like(p.values) for p in params],
            second_moment=[np.zeros_like(p.values) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            first_moment=[m.copy() for m in self.first_moment],
            second_moment=[v.copy() for v in self.second_moment],
            step_count=self.step_count,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> Tuple[Sequence[Tensor], AdamState]:
    """
    One bias-corrected Adam update, applied in place to ``params``.
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("adam_step", [(len(params),), (len(grads),), (len(state.first_moment),)], "count mismatch")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError("adam_step", [p.shape, np.shape(g), m.shape])

    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
