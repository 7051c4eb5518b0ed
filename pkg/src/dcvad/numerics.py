"""Dense float64 tensors with a small reverse-mode tape, plus Adam.

Only the operations the two trainable branches need are provided:
elementwise add/sub/mul, matmul, tanh, exp, reductions, reshape,
column gather/scatter for coupling layers, and softmax cross-entropy.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DeterminismError, IncompleteGradientError, InvalidInputError

LOG_2PI = math.log(2.0 * math.pi)

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape (inference, finite differences)."""
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.data.size != 1:
            raise InvalidInputError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    if _recording() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise InvalidInputError("matmul expects two 2-D tensors")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(a) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(y, (a,), back)


def mean(a, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take_columns(a, idx: np.ndarray) -> Tensor:
    """``a[..., idx]`` for a set of distinct column indices."""
    def back(g):
        out = np.zeros_like(a.data)
        out[..., idx] = g
        return (out,)
    return _make(a.data[..., idx], (a,), back)


def scatter_columns(parts: Iterable[tuple[Tensor, np.ndarray]], width: int) -> Tensor:
    """Assemble a tensor whose columns ``idx`` come from each ``(tensor, idx)`` part."""
    parts = list(parts)
    lead = parts[0][0].shape[:-1]
    out = np.empty(lead + (width,))
    for t, idx in parts:
        out[..., idx] = t.data
    return _make(out, [t for t, _ in parts], lambda g: tuple(g[..., idx] for _, idx in parts))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Sum of per-row weighted negative log-probabilities of ``labels``, divided by the row count."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -(w * logp[rows, labels]).sum() / n

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d * (w / n)[:, None],)
    return _make(np.asarray(loss), (logits,), back)


def gaussian_log_density(z, dims: int | None = None):
    """Standard-normal log-density over the last axis.

    Returns a Tensor (recorded on the tape) for Tensor input, otherwise
    a float or array of per-row values.
    """
    data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if data.ndim == 0:
        data = data.reshape(1)
    d = data.shape[-1]
    if dims is not None and dims != d:
        raise InvalidInputError(f"expected {dims} dimensions, got {d}")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("gaussian_log_density received non-finite input")
    if isinstance(z, Tensor):
        return add(mul(tsum(mul(z, z), axis=-1), -0.5), -0.5 * d * LOG_2PI)
    out = -0.5 * d * LOG_2PI - 0.5 * np.sum(data * data, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


class ParamSet(Mapping):
    """Named trainable tensors with a parallel map of gradients."""

    def __init__(self, values: Mapping[str, np.ndarray | Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, v in (values or {}).items():
            arr = v.data if isinstance(v, Tensor) else v
            self._params[name] = Tensor(np.array(arr, dtype=np.float64), requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def replace(self, **updates: np.ndarray) -> "ParamSet":
        new = self.arrays()
        for k, v in updates.items():
            if k not in new:
                raise KeyError(k)
            new[k] = v
        return ParamSet(new)

    def zero_grad(self) -> None:
        self.grads = {}
        for t in self._params.values():
            t.grad = None

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Backpropagate ``loss`` and store gradients (zeros for unused parameters)."""
        self.zero_grad()
        loss.backward()
        for k, t in self._params.items():
            self.grads[k] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return self.grads


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamSet, state: OptimState) -> tuple[ParamSet, OptimState]:
    missing = [k for k in params if k not in params.grads]
    if missing:
        raise IncompleteGradientError(f"no gradient for {missing}")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_vals, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = params.grads[k]
        if g.shape != p.shape:
            raise IncompleteGradientError(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(k, 0.0) * state.beta1 + (1.0 - state.beta1) * g
        v = state.v.get(k, 0.0) * state.beta2 + (1.0 - state.beta2) * g * g
        new_vals[k] = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    new_state = OptimState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return ParamSet(new_vals), new_state


def _scalar(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def grad_check(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet, eps: float = 1e-5, *,
               sample: int | None = None, seed: int = 0) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    The relative error of each entry is ``|a - n| / max(1, |a|, |n|)``.
    ``sample`` limits the check to that many random entries per tensor.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    params = ParamSet(params.arrays())
    loss = loss_fn(params)
    with no_grad():
        again = _scalar(loss_fn(params))
    if again != _scalar(loss):
        raise DeterminismError("loss_fn returned different values for identical parameters")
    analytic = params.backward(loss)

    rng = np.random.default_rng(seed)
    base = params.arrays()
    worst = 0.0
    for name, arr in base.items():
        flat = np.arange(arr.size)
        if sample is not None and sample < arr.size:
            flat = np.sort(rng.choice(arr.size, size=sample, replace=False))
        for i in flat:
            idx = np.unravel_index(i, arr.shape)
            vals = []
            for sign in (1.0, -1.0):
                shifted = arr.copy()
                shifted[idx] += sign * eps
                with no_grad():
                    vals.append(_scalar(loss_fn(params.replace(**{name: shifted}))))
            numeric = (vals[0] - vals[1]) / (2.0 * eps)
            a = float(analytic[name][idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst
