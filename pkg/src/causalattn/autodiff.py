"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tensor` wraps a numpy array plus an optional gradient buffer.
Operations executed while a :class:`Tape` is active append a record with a
backward rule; :func:`backward` replays the tape in reverse and accumulates
gradients additively into every tensor that requires them.

All values are float64. Computation is strictly sequential, so identical
inputs yield bitwise-identical outputs and gradients. A tape and the tensors
recorded on it belong to one thread at a time; independent model instances
may run on distinct threads as nothing here is shared.
"""

from __future__ import annotations

import numpy as np

EPS_LOG = 1e-12


class Tensor:
    """Dense array with shape, values and an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        # own=True promises g is freshly allocated and aliases nothing, so the
        # first contribution can be stored without a defensive copy.
        if self.grad is None:
            self.grad = g if own else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("kind", "output", "backward_fn")

    def __init__(self, kind, output, backward_fn):
        self.kind = kind
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.pop()
        return False


_ACTIVE: list[Tape] = []


def _record(kind: str, output: Tensor, backward_fn) -> None:
    if _ACTIVE and output.requires_grad:
        _ACTIVE[-1].nodes.append(TapeNode(kind, output, backward_fn))


def backward(tape: Tape, loss: Tensor, retain: bool = True) -> None:
    """Fill ``grad`` for every requires-grad tensor reachable from ``loss``.

    With ``retain=False`` each op output's gradient is released as soon as it
    has been propagated; only leaf tensors (parameters, inputs) keep theirs.
    """
    if loss.values.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    loss.accumulate_grad(np.ones((), dtype=np.float64))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is not None:
            node.backward_fn(g)
            if not retain:
                node.output.grad = None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# elementwise / broadcast ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.values + b.values, _requires(a, b))

    def bwd(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.values.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.values.shape)
            b.accumulate_grad(gb, own=gb is not g)

    _record("add", out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.values - b.values, _requires(a, b))

    def bwd(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.values.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            b.accumulate_grad(-_unbroadcast(g, b.values.shape), own=True)

    _record("sub", out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (covers mask broadcasts)."""
    out = Tensor(a.values * b.values, _requires(a, b))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.values, a.values.shape), own=True)
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.values, b.values.shape), own=True)

    _record("mul", out, bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values * c, a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g * c, own=True)

    _record("scale", out, bwd)
    return out


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.values + c, a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g)

    _record("shift", out, bwd)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g * (a.values > 0.0), own=True)

    _record("relu", out, bwd)
    return out


def rsqrt(a: Tensor) -> Tensor:
    """x ** -0.5 for strictly positive x."""
    if np.any(a.values <= 0.0):
        raise ValueError("rsqrt requires strictly positive inputs")
    y = 1.0 / np.sqrt(a.values)
    out = Tensor(y, a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g * (-0.5) * y / a.values, own=True)

    _record("rsqrt", out, bwd)
    return out


def log_eps(a: Tensor, eps: float = EPS_LOG) -> Tensor:
    """Guarded logarithm log(x + eps); x must be nonnegative."""
    if np.any(a.values < 0.0):
        raise ValueError("log_eps requires nonnegative inputs")
    shifted = a.values + eps
    out = Tensor(np.log(shifted), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g / shifted, own=True)

    _record("log_eps", out, bwd)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 2-D tensor."""
    if a.values.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D tensor, got shape {a.values.shape}")
    z = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s, a.requires_grad)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        a.accumulate_grad(s * (g - dot), own=True)

    _record("softmax_rows", out, bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra / structure ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul shapes do not chain: {a.values.shape} @ {b.values.shape}")
    out = Tensor(a.values @ b.values, _requires(a, b))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.values.T, own=True)
        if b.requires_grad:
            b.accumulate_grad(a.values.T @ g, own=True)

    _record("matmul", out, bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T, a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g.T)

    _record("transpose", out, bwd)
    return out


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if axis not in (0, 1):
        raise ValueError("concat supports axis 0 or 1")
    out = Tensor(np.concatenate([p.values for p in parts], axis=axis), _requires(*parts))
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                piece = g[lo:hi] if axis == 0 else g[:, lo:hi]
                p.accumulate_grad(piece)

    _record("concat", out, bwd)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.values[:, start:stop].copy(), a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.values)
        full[:, start:stop] = g
        a.accumulate_grad(full, own=True)

    _record("slice_cols", out, bwd)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.values[start:stop].copy(), a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        a.accumulate_grad(full, own=True)

    _record("slice_rows", out, bwd)
    return out


class ScatterPlan:
    """Precomputed reduceat layout for fast row scatter-add by index."""

    __slots__ = ("n_rows", "order", "starts", "seg_ids")

    def __init__(self, idx: np.ndarray, n_rows: int):
        idx = np.asarray(idx, dtype=np.int64)
        self.n_rows = int(n_rows)
        self.order = np.argsort(idx, kind="stable")
        sorted_idx = idx[self.order]
        if sorted_idx.size:
            self.starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
            self.seg_ids = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.seg_ids = np.zeros(0, dtype=np.int64)

    def scatter(self, rows: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_rows, rows.shape[1]), dtype=np.float64)
        if self.seg_ids.size:
            out[self.seg_ids] = np.add.reduceat(rows[self.order], self.starts, axis=0)
        return out


def gather_rows(a: Tensor, idx: np.ndarray, plan: ScatterPlan | None = None) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.values[idx], a.requires_grad)

    def bwd(g):
        if plan is not None:
            a.accumulate_grad(plan.scatter(g), own=True)
        else:
            full = np.zeros_like(a.values)
            np.add.at(full, idx, g)
            a.accumulate_grad(full, own=True)

    _record("gather_rows", out, bwd)
    return out


def scatter_rows(a: Tensor, idx: np.ndarray, plan: ScatterPlan) -> Tensor:
    """Sum rows of ``a`` into ``plan.n_rows`` output rows grouped by index:
    the edge-list message-passing aggregation primitive."""
    out = Tensor(plan.scatter(a.values), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(g[np.asarray(idx, dtype=np.int64)], own=True)

    _record("scatter_rows", out, bwd)
    return out


def edges_to_dense(w: Tensor, src: np.ndarray, dst: np.ndarray, n: int,
                   unit_diag: bool = False) -> Tensor:
    """Place one weight per directed edge into a dense (n, n) matrix,
    optionally with fixed (non-differentiable) unit self-loops."""
    vals = np.zeros((n, n), dtype=np.float64)
    if unit_diag:
        np.fill_diagonal(vals, 1.0)
    vals[src, dst] = w.values.ravel()
    out = Tensor(vals, w.requires_grad)

    def bwd(g):
        w.accumulate_grad(g[src, dst].reshape(w.values.shape), own=True)

    _record("edges_to_dense", out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions


def rowsum(a: Tensor) -> Tensor:
    """(n, m) -> (n, 1): sum within each row."""
    out = Tensor(a.values.sum(axis=1, keepdims=True), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g, a.values.shape))

    _record("rowsum", out, bwd)
    return out


def colmean(a: Tensor) -> Tensor:
    """(n, m) -> (1, m): mean down each column."""
    n = a.values.shape[0]
    if n == 0:
        raise ValueError("colmean requires at least one row")
    out = Tensor(a.values.mean(axis=0, keepdims=True), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g / n, a.values.shape))

    _record("colmean", out, bwd)
    return out


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(a.values.sum(), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g, a.values.shape))

    _record("tsum", out, bwd)
    return out


def tmean(a: Tensor) -> Tensor:
    """Mean of all entries, as a scalar tensor."""
    size = a.values.size
    if size == 0:
        raise ValueError("tmean of an empty tensor")
    out = Tensor(a.values.mean(), a.requires_grad)

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g / size, a.values.shape))

    _record("tmean", out, bwd)
    return out


# Registry of the primitive op kinds, used by gradient-contract tests.
OP_KINDS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "shift": shift,
    "relu": relu,
    "rsqrt": rsqrt,
    "log_eps": log_eps,
    "softmax_rows": softmax_rows,
    "matmul": matmul,
    "transpose": transpose,
    "concat": concat,
    "slice_cols": slice_cols,
    "slice_rows": slice_rows,
    "gather_rows": gather_rows,
    "scatter_rows": scatter_rows,
    "edges_to_dense": edges_to_dense,
    "rowsum": rowsum,
    "colmean": colmean,
    "tsum": tsum,
    "tmean": tmean,
}


def forward_op(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch an op by kind name; unknown kinds raise ValueError."""
    try:
        fn = OP_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind: {kind!r}") from None
    return fn(*args, **kwargs)
