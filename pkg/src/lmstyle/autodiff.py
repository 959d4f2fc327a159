"""Dense-tensor engine with tape-based reverse-mode automatic differentiation.

The op set is deliberately small: matmul, elementwise add/mul (with the
limited broadcasting the recurrent models need), sigmoid, tanh,
softmax/log-softmax, embedding gather, concat, slice, sum/mean,
cross-entropy, plus a couple of fused conveniences (scale_shift, add_n,
log_sigmoid, minimum_const). Everything runs on numpy arrays; float32 is
the training default and float64 is used by the gradient-check suite.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

DEFAULT_DTYPE = np.float32

# When enabled, every op output and every backward gradient is checked for
# NaN. Cheap at desk scale; the test suite turns it on.
DEBUG_NAN = False


def set_debug_nan(enabled: bool) -> None:
    global DEBUG_NAN
    DEBUG_NAN = bool(enabled)


def _check_nan(arr: np.ndarray, where: str) -> None:
    if DEBUG_NAN and np.isnan(arr).any():
        raise FloatingPointError(f"NaN produced in {where}")


class Tensor:
    """An n-d array that can participate in a recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=True)


def uniform_init(shape, rng: np.random.Generator, scale: float = 0.08, dtype=None) -> Tensor:
    """Weight initializer: uniform(-scale, scale). Biases should use zeros."""
    data = rng.uniform(-scale, scale, size=shape)
    return parameter(data, dtype=dtype)


def zeros_init(shape, dtype=None) -> Tensor:
    return parameter(np.zeros(shape), dtype=dtype)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of operations; backward walks it exactly once in reverse.

    Ops only record themselves while a tape is active, so running model code
    outside any ``with Tape()`` block is a cheap forward-only mode.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(leaf) for every requires_grad leaf.

        Returns a map from leaf Tensor to its gradient array and also stores
        it on ``leaf.grad`` (adding to any existing gradient). Tensors not
        reachable from ``loss`` simply receive no entry, i.e. zero.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        produced = {id(out) for out, _, _ in self._nodes}
        for out, inputs, back in reversed(self._nodes):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, back(g)):
                if gi is None or not t.requires_grad:
                    continue
                _check_nan(gi, "backward")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    holders[key] = t
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for key, g in grads.items():
            t = holders[key]
            if key in produced or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g
            leaf_grads[t] = g
        return leaf_grads


def _record(out: Tensor, inputs: tuple[Tensor, ...], back) -> Tensor:
    _check_nan(out.data, "forward")
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1]._nodes.append((out, inputs, back))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _record(out, (a, b), back)


def scale_shift(t: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """out = t * scale + shift with constant scalars (fused elementwise affine)."""
    out = Tensor(t.data * scale + shift)

    def back(g):
        return (g * scale,)

    return _record(out, (t,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError("matmul expects 2-d operands")
    out = Tensor(a.data @ b.data)

    def back(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _record(out, (a, b), back)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype, copy=False)
    out = Tensor(s)

    def back(g):
        return (g * s * (1.0 - s),)

    return _record(out, (t,), back)


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = Tensor(y)

    def back(g):
        return (g * (1.0 - y * y),)

    return _record(out, (t,), back)


def log_sigmoid(t: Tensor) -> Tensor:
    """log(sigmoid(t)), computed as min(t, 0) - log1p(exp(-|t|)) for stability."""
    x = t.data
    e = np.exp(-np.abs(x))
    out = Tensor(np.minimum(x, 0) - np.log1p(e))

    def back(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.where(x >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        return (g * s,)

    return _record(out, (t,), back)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data
    if not np.isfinite(z).all():
        raise ContractError("softmax requires finite logits")
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def back(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return _record(out, (t,), back)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data
    if not np.isfinite(z).all():
        raise ContractError("log_softmax requires finite logits")
    m = z.max(axis=axis, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)

    def back(g):
        p = np.exp(out.data)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(out, (t,), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (V, d) at integer ``ids``; scatter-add backward."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError("token id out of range for embedding table")
    out = Tensor(table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), back)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    return _record(out, tuple(tensors), back)


def take(t: Tensor, key) -> Tensor:
    """Basic-indexing slice; backward scatters into a zero array."""
    out = Tensor(t.data[key])

    def back(g):
        gt = np.zeros_like(t.data)
        gt[key] = g
        return (gt,)

    return _record(out, (t,), back)


def sum_(t: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(t.data.sum(axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, t.shape).astype(t.dtype, copy=False),)
        return (np.broadcast_to(np.expand_dims(g, axis), t.shape).copy(),)

    return _record(out, (t,), back)


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    n = t.size if axis is None else t.shape[axis]
    out = Tensor(t.data.mean(axis=axis))

    def back(g):
        if axis is None:
            return ((np.broadcast_to(g, t.shape) / n).astype(t.dtype, copy=False),)
        return (np.broadcast_to(np.expand_dims(g, axis), t.shape) / n,)

    return _record(out, (t,), back)


def add_n(tensors: list[Tensor]) -> Tensor:
    """Sum of same-shape tensors in one node (keeps long accumulations cheap)."""
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor(acc)

    def back(g):
        return tuple(g if t.requires_grad else None for t in tensors)

    return _record(out, tuple(tensors), back)


def cross_entropy(target: Tensor, log_probs: Tensor, tol: float = 1e-6) -> Tensor:
    """-sum(target * log_probs) over the last axis.

    ``target`` must be on the probability simplex row-wise (checked to
    ``tol``); both slots receive gradients, which is what lets the relaxed
    language-model loss reach the generator through its own output
    distributions as well as through the LM inputs.
    """
    target, log_probs = _as_tensor(target), _as_tensor(log_probs)
    tdata = target.data
    sums = tdata.sum(axis=-1)
    if np.abs(sums - 1.0).max() > tol or tdata.min() < -tol:
        raise ContractError("cross_entropy target is off the probability simplex")
    out = Tensor(-(tdata * log_probs.data).sum(axis=-1))

    def back(g):
        ge = np.expand_dims(g, -1)
        return (-ge * log_probs.data if target.requires_grad else None,
                -ge * tdata if log_probs.requires_grad else None)

    return _record(out, (target, log_probs), back)


def minimum_const(t: Tensor, cap: float) -> Tensor:
    """Elementwise min(t, cap); gradient passes only where t < cap."""
    out = Tensor(np.minimum(t.data, cap))

    def back(g):
        return (g * (t.data < cap),)

    return _record(out, (t,), back)
