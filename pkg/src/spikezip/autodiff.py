"""Dense tensors with reverse-mode differentiation.

Only the handful of operations the compressive autoencoder needs are
provided. Every op builds a node holding its parents and a closure that maps
the output gradient to one gradient per parent; :meth:`Tensor.backward`
walks the graph in reverse topological order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_node_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when a value or gradient becomes NaN or infinite."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """An N-d array that can take part in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DTYPE)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        # intermediates skip the scan: non-finite values propagate to the scalar loss
        if op == "leaf" or arr.size == 1:
            _check_finite(arr, op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> Tensor:
        return tensor_sum(self)

    def reshape(self, *shape) -> Tensor:
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    _check_finite(g, "leaf gradient")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    """Wrap an op result; the closure is dropped when no parent needs a gradient."""
    if any(_needs_grad(p) for p in parents):
        return Tensor(data, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def tensor_sum(a: Tensor) -> Tensor:
    return make_node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def reshape(a: Tensor, shape) -> Tensor:
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements; ``b`` may be a plain array."""
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return make_node(np.asarray((diff * diff).sum() / n), (a, b), backward, "mse")


@dataclass
class AdamState:
    """Optimizer bookkeeping; moments are keyed by parameter position."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState, grads: list[np.ndarray] | None = None) -> AdamState:
    """Apply one bias-corrected ADAM update in place.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient counts
    as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, p in enumerate(params):
        g = grads[i] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def gradient_check(fn, inputs: list[Tensor], eps: float = 1e-6, max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` maps the ``inputs`` to a scalar Tensor. For each input the error
    is ``||a - n|| / max(||a||, ||n||, floor)`` over the checked entries.
    ``floor`` is 1e-4 of the largest per-input gradient norm, so inputs whose
    true gradient is zero (e.g. a shift cancelled by a later normalization)
    are judged on an absolute scale instead of comparing round-off to
    round-off. With ``max_entries`` only that many randomly chosen entries
    per input are perturbed.
    """
    for t in inputs:
        t.grad = None
    fn(*inputs).backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    pairs = []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        picks = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(len(picks))
        for j, i in enumerate(picks):
            keep = flat[i]
            flat[i] = keep + eps
            up = fn(*inputs).item()
            flat[i] = keep - eps
            down = fn(*inputs).item()
            flat[i] = keep
            num[j] = (up - down) / (2 * eps)
        pairs.append((a.reshape(-1)[picks], num))
    norms = [max(np.linalg.norm(a), np.linalg.norm(n)) for a, n in pairs]
    floor = 1e-4 * max(norms, default=0.0)
    worst = 0.0
    for (a, n), scale in zip(pairs, norms):
        scale = max(scale, floor)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
