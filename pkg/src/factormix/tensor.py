"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every network and mixer in this package runs on :class:`Tensor`, a thin
wrapper around a row-major ``numpy`` array that records a computation tape
when gradients are requested.  The design favours predictability over
generality: float64 everywhere, copies instead of views, and a fixed set of
primitives (the ones the agent networks and mixing heads actually need).

Subgradient conventions, chosen once so tests and learners agree:

* ``relu`` and ``abs`` use subgradient 0 at 0,
* ``max_over_axis`` routes the gradient to the lowest maximizing index.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense float64 array with optional gradient accumulation.

    ``data`` is always a C-contiguous float64 ndarray, so the flat row-major
    buffer has exactly ``prod(shape)`` elements.  ``grad`` matches ``data``'s
    shape once ``backward`` has run through this node.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_freed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar used throughout the networks.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every requires_grad tensor.

        The tape rooted at this node is traversed exactly once in reverse
        topological order and then cleared; calling ``backward`` on the same
        node twice is an error.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be scalar, got shape {self.data.shape}"
            )
        if self._freed:
            raise RuntimeError("backward: tape already consumed for this tensor")
        if not self.requires_grad:
            raise RuntimeError("backward: tensor does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            # Gradient arrays are never mutated in place downstream, so
            # assigning without a copy is safe.
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is not None:
                parent_grads = node._vjp(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
            # Clear the tape as we go so the graph is released.
            node._parents = ()
            node._vjp = None
            node._freed = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._vjp = vjp
        return out
    return Tensor(data)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    need_a, need_b = a.requires_grad, b.requires_grad
    return _result(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if need_a else None,
            _unbroadcast(g * a.data, b.shape) if need_b else None,
        ),
    )


def matmul(a, b) -> Tensor:
    """Matrix product for (m,k)@(k,n), (k,)@(k,n) and (m,k)@(k,) operands."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} unsupported")
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    data = ad @ bd
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g: Array):
        if ad.ndim == 2 and bd.ndim == 2:
            return (g @ bd.T if need_a else None,
                    ad.T @ g if need_b else None)
        if ad.ndim == 1 and bd.ndim == 2:
            return (g @ bd.T if need_a else None,
                    np.outer(ad, g) if need_b else None)
        if ad.ndim == 2 and bd.ndim == 1:
            return (np.outer(g, bd) if need_a else None,
                    ad.T @ g if need_b else None)
        return (g * bd if need_a else None,
                g * ad if need_b else None)  # (k,)@(k,) dot product

    return _result(data, (a, b), vjp)


def relu(t) -> Tensor:
    t = as_tensor(t)
    mask = t.data > 0
    return _result(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def elu(t, alpha: float = 1.0) -> Tensor:
    """Exponential linear unit; the mixing-network nonlinearity (alpha = 1)."""
    t = as_tensor(t)
    neg = np.expm1(np.minimum(t.data, 0.0)) * alpha
    data = np.where(t.data > 0, t.data, neg)
    return _result(
        data, (t,), lambda g: (g * np.where(t.data > 0, 1.0, neg + alpha),)
    )


def abs_(t) -> Tensor:
    t = as_tensor(t)
    return _result(np.abs(t.data), (t,), lambda g: (g * np.sign(t.data),))


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    s = 1.0 / (1.0 + np.exp(-t.data))
    return _result(s, (t,), lambda g: (g * s * (1.0 - s),))


def tanh(t) -> Tensor:
    t = as_tensor(t)
    y = np.tanh(t.data)
    return _result(y, (t,), lambda g: (g * (1.0 - y * y),))


def softplus(t) -> Tensor:
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    t = as_tensor(t)
    x = t.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _result(data, (t,), lambda g: (g / (1.0 + np.exp(-x)),))


def softmax(t, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: Array):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((g - inner) * s,)

    return _result(s, (t,), vjp)


def sum_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g, t.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, t.shape).copy(),)

    return _result(data, (t,), vjp)


def mean_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    n = t.data.size if axis is None else t.data.shape[axis]
    return mul(sum_(t, axis=axis, keepdims=keepdims), 1.0 / n)


def max_over_axis(t, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; ties route the gradient to the lowest index."""
    t = as_tensor(t)
    idx = t.data.argmax(axis=axis)  # argmax picks the first (lowest) maximum
    data = np.take_along_axis(t.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def vjp(g: Array):
        gg = g if keepdims else np.expand_dims(g, axis)
        out = np.zeros_like(t.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), gg, axis=axis)
        return (out,)

    return _result(data, (t,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise ValueError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: Array):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(data, tuple(ts), vjp)


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    data = t.data.reshape(shape)
    return _result(data, (t,), lambda g: (g.reshape(t.shape),))


def slice_axis0(t, lo: int, hi: int) -> Tensor:
    """Rows lo:hi of a tensor; the gradient scatters back into place."""
    t = as_tensor(t)
    if not 0 <= lo <= hi <= t.shape[0]:
        raise ValueError(f"slice_axis0: range [{lo}, {hi}) invalid for shape {t.shape}")
    data = t.data[lo:hi].copy()

    def vjp(g: Array):
        out = np.zeros_like(t.data)
        out[lo:hi] = g
        return (out,)

    return _result(data, (t,), vjp)


def batch_matvec(x, w) -> Tensor:
    """Per-row matrix product: x (B,n) with w (B,n,m) giving (B,m).

    Used to apply hypernetwork-produced weight matrices, one per batch row.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or x.shape[0] != w.shape[0] or x.shape[1] != w.shape[1]:
        raise ValueError(f"batch_matvec: shapes {x.shape} and {w.shape} do not conform")
    data = np.einsum("bn,bnm->bm", x.data, w.data)
    need_x, need_w = x.requires_grad, w.requires_grad

    def vjp(g: Array):
        return (
            np.einsum("bm,bnm->bn", g, w.data) if need_x else None,
            np.einsum("bn,bm->bnm", x.data, g) if need_w else None,
        )

    return _result(data, (x, w), vjp)


def square(t) -> Tensor:
    return mul(t, t)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "elu": elu,
    "abs": abs_,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "sum": sum_,
    "max_over_axis": max_over_axis,
    "concat": concat,
}


def forward_primitive(op: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the named primitives; see module docstring for the set."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"forward_primitive: unknown op {op!r}") from None
    if op == "concat":
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    max_rel_error: float
    per_param: list[float]
    worst_param: int
    worst_coord: int
    nan_params: list[int] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.nan_params and self.max_rel_error < self.tol


def finite_diff_check(f, params, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Check d f / d params against central finite differences.

    ``f`` must be a deterministic scalar-valued function of the given
    parameter tensors.  The relative error for one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``, so near-zero
    gradients are judged on an absolute scale.
    """
    if step <= 0:
        raise ValueError(f"finite_diff_check: step must be positive, got {step}")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f(*params)
    if loss.size != 1:
        raise ValueError("finite_diff_check: f must return a scalar tensor")
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]

    per_param: list[float] = []
    nan_params: list[int] = []
    worst = (0.0, 0, 0)
    with no_grad():
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            aflat = analytic[pi].reshape(-1)
            worst_here = 0.0
            for ci in range(flat.size):
                orig = flat[ci]
                flat[ci] = orig + step
                fp = f(*params).item()
                flat[ci] = orig - step
                fm = f(*params).item()
                flat[ci] = orig
                numeric = (fp - fm) / (2.0 * step)
                if not (np.isfinite(numeric) and np.isfinite(aflat[ci])):
                    nan_params.append(pi)
                    continue
                err = abs(aflat[ci] - numeric) / max(1.0, abs(aflat[ci]), abs(numeric))
                if err > worst_here:
                    worst_here = err
                if err > worst[0]:
                    worst = (err, pi, ci)
            per_param.append(worst_here)
    return GradCheckReport(
        max_rel_error=worst[0],
        per_param=per_param,
        worst_param=worst[1],
        worst_coord=worst[2],
        nan_params=sorted(set(nan_params)),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# Weight map persistence: a flat key -> float64 array archive (npz).  Keys are
# dotted module paths, e.g. "agent.gru.weight_update_input".  An optional JSON
# metadata dict travels under the reserved "__meta__" key.
# ---------------------------------------------------------------------------

_META_KEY = "__meta__"


def save_weight_map(path, arrays: dict[str, Array], meta: dict | None = None) -> None:
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    if _META_KEY in payload:
        raise ValueError(f"save_weight_map: key {_META_KEY!r} is reserved")
    if meta is not None:
        payload[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_weight_map(path) -> tuple[dict[str, Array], dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = {}
        arrays = {}
        for key in archive.files:
            if key == _META_KEY:
                meta = json.loads(str(archive[key]))
            else:
                arrays[key] = archive[key].astype(np.float64)
    return arrays, meta
