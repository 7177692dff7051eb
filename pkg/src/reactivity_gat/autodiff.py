"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operators the attention network needs are provided. Every op
records its parents and a backward closure on the output tensor; calling
:func:`backward` orders the recorded graph topologically and runs each
closure exactly once.

A graph and its tensors belong to a single thread.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "LEAKY_SLOPE",
    "ELU_ALPHA",
    "NumericalError",
    "Tensor",
    "ParamStore",
    "AdamState",
    "GradCheckReport",
    "make_rng",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "concat",
    "reshape",
    "gather",
    "segment_sum",
    "segment_softmax",
    "leaky_relu",
    "elu",
    "sigmoid",
    "tanh",
    "dropout",
    "mean",
    "mse",
    "backward",
    "adam_step",
    "grad_check",
    "grad_check_report",
]

LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0


class NumericalError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float64)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ------------------------------------------------------------- kink tracking
# grad_check compares sign patterns of leaky_relu inputs between perturbed
# and base evaluations to skip coordinates that straddle the kink at 0.

_kink_state = threading.local()


def _record_kink(x: np.ndarray) -> None:
    log = getattr(_kink_state, "log", None)
    if log is not None:
        log.append(np.signbit(x) | (x == 0.0))


# ---------------------------------------------------------------- operators


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", bw)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op} shape mismatch: {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", bw)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat shape mismatch: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _result(data, parts, "concat", bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    original = x.shape

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.reshape(original))

    return _result(x.data.reshape(shape), (x,), "reshape", bw)


def gather(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]``; repeated indices accumulate in backward."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        if x.requires_grad:
            x._accumulate(_segment_reduce(g, index, x.shape[0]))

    return _result(x.data[index], (x,), "gather", bw)


def _segment_reduce(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Deterministic scatter-add of rows into ``n`` buckets."""
    out = np.zeros((n,) + values.shape[1:])
    if seg.size == 0:
        return out
    if np.all(seg[1:] >= seg[:-1]):
        sorted_seg, sorted_vals = seg, values
    else:
        order = np.argsort(seg, kind="stable")
        sorted_seg, sorted_vals = seg[order], values[order]
    starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
    out[sorted_seg[starts]] = np.add.reduceat(sorted_vals, starts, axis=0)
    return out


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given per-row ids."""
    x = _as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ValueError(f"segment ids ({seg.shape[0]}) do not match rows ({x.shape[0]})")

    def bw(g):
        if x.requires_grad:
            x._accumulate(g[seg])

    return _result(_segment_reduce(x.data, seg, num_segments), (x,), "segment_sum", bw)


def segment_softmax(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment (max-subtracted)."""
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ValueError("segment_softmax expects a 1-D score vector")
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ValueError("segment ids do not match scores")
    if np.any(np.bincount(seg, minlength=num_segments)[:num_segments] == 0):
        raise ValueError("segment_softmax received an empty segment")

    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, seg, x.data)
    ex = np.exp(x.data - peak[seg])
    denom = _segment_reduce(ex, seg, num_segments)
    out = ex / denom[seg]

    def bw(g):
        if x.requires_grad:
            dot = _segment_reduce(out * g, seg, num_segments)
            x._accumulate(out * (g - dot[seg]))

    return _result(out, (x,), "segment_softmax", bw)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = _as_tensor(x)
    _record_kink(x.data)
    pos = x.data > 0

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.where(pos, g, slope * g))

    return _result(np.where(pos, x.data, slope * x.data), (x,), "leaky_relu", bw)


def elu(x: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_part)

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.where(pos, g, g * (neg_part + alpha)))

    return _result(out, (x,), "elu", bw)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), "sigmoid", bw)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out * out))

    return _result(out, (x,), "tanh", bw)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the exact identity when ``train`` is off or ``p == 0``."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _result(x.data * mask, (x,), "dropout", bw)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ValueError("mean of an empty tensor")
    count = x.data.size if axis is None else x.shape[axis]

    def bw(g):
        if x.requires_grad:
            gg = g if axis is None else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(gg / count, x.shape).copy())

    return _result(np.asarray(x.data.mean(axis=axis)), (x,), "mean", bw)


def mse(pred: Tensor, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# ----------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``.

    Leaf gradients accumulate (call :meth:`ParamStore.zero_grad` first);
    intermediate gradients are released once propagated.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None
    for node in order:
        if node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise NumericalError(f"non-finite gradient for {node.name or node.op}")


# ----------------------------------------------------------- parameter store


class ParamStore:
    """Ordered name -> Tensor map of learnable parameters."""

    def __init__(self, tensors: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in tensors:
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state_dict(self, state) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in self._params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {value.shape} vs {t.data.shape}")
            t.data = value.copy()

    def copy(self) -> "ParamStore":
        return ParamStore(self.state_dict().items())


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """One Adam update; L2 decay is added to the gradient. Clears grads."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if lr:
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ------------------------------------------------------------ gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str = ""


def _leaves(x) -> list[tuple[str, Tensor]]:
    if isinstance(x, Tensor):
        return [(x.name or "x", x)]
    if isinstance(x, ParamStore):
        return list(x.items())
    return [(t.name or f"x{i}", t) for i, t in enumerate(x)]


def grad_check_report(f: Callable, x, eps: float = 1e-5, max_coords: int | None = None,
                      seed: int = 0) -> GradCheckReport:
    """Compare backward gradients with central differences.

    ``f(x)`` must return a scalar Tensor and be deterministic. ``x`` is a
    Tensor, a sequence of Tensors, or a :class:`ParamStore`. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    checked. Coordinates whose perturbation flips the sign of any
    ``leaky_relu`` input are skipped as kink crossings.
    """
    leaves = _leaves(x)
    for _, t in leaves:
        t.grad = np.zeros_like(t.data)
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = {id(t): t.grad.copy() for _, t in leaves}
    for _, t in leaves:
        t.grad = None

    def evaluate() -> tuple[float, list[np.ndarray]]:
        _kink_state.log = []
        try:
            value = float(f(x).data)
            return value, _kink_state.log
        finally:
            _kink_state.log = None

    _, base_pattern = evaluate()
    rng = np.random.default_rng(seed)
    worst, worst_at, checked, skipped = 0.0, "", 0, 0
    for name, t in leaves:
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        grad = analytic[id(t)].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus, pat_plus = evaluate()
            flat[c] = orig - eps
            f_minus, pat_minus = evaluate()
            flat[c] = orig
            crossed = any(
                not np.array_equal(p, q) for p, q in zip(base_pattern, pat_plus)
            ) or any(not np.array_equal(p, q) for p, q in zip(base_pattern, pat_minus))
            if crossed:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(grad[c] - numeric) / max(1.0, abs(numeric))
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}[{c}]"
    return GradCheckReport(worst, checked, skipped, worst_at)


def grad_check(f: Callable, x, eps: float = 1e-5, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Maximum of ``|analytic - numeric| / max(1, |numeric|)`` over coordinates."""
    return grad_check_report(f, x, eps, max_coords, seed).max_rel_error
