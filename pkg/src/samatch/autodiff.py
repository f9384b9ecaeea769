"""Dense float64 matrices with tape-based reverse-mode differentiation.

Everything is 2-D. Elementwise ops broadcast like numpy but only within two
dimensions (a (1,N), (M,1) or (1,1) operand against (M,N)). Tensor values are
immutable once created, so finished graphs can be read from other threads;
building and differentiating a graph is single-threaded.

The primitive set is deliberately closed (matmul, elementwise arithmetic,
exp/log/sigmoid/gelu, row softmax, logsumexp, reductions, concat/slice/
transpose/gather, stop-gradient and one-hot argmax) so each vjp can be
verified in isolation against finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476     # 1/sqrt(2)
_INV_SQRT_2PI = 0.3989422804014327  # 1/sqrt(2*pi), gaussian pdf at 0


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D value, got shape {a.shape}")
    return np.ascontiguousarray(a)


class Tensor:
    """One node of the computation graph; leaves have no parents."""

    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value if isinstance(value, np.ndarray) else _as_matrix(value)
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on non-scalar shape {self.value.shape}")
        return float(self.value[0, 0])

    # Operator sugar; float operands map to the constant-scalar primitives.
    def __add__(self, other):
        return add_const(self, other) if isinstance(other, (int, float)) else add(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        return add_const(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __truediv__(self, other):
        return scale(self, 1.0 / other) if isinstance(other, (int, float)) else div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """Named leaf with a gradient slot; values are updated in place by the optimizer."""

    __slots__ = ("name", "trainable", "grad")

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(_as_matrix(value).copy())
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)


class ParamStore:
    """Insertion-ordered registry of named parameters."""

    def __init__(self):
        self._slots: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True) -> Parameter:
        if name in self._slots:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, trainable)
        self._slots[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._slots[name]

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __len__(self):
        return len(self._slots)

    def names(self):
        return list(self._slots)

    def params(self):
        return list(self._slots.values())

    def trainable(self):
        return [p for p in self._slots.values() if p.trainable]

    def zero_grads(self):
        for p in self._slots.values():
            p.grad[...] = 0.0

    def n_entries(self) -> int:
        return sum(p.value.size for p in self._slots.values() if p.trainable)


def constant(x) -> Tensor:
    return Tensor(_as_matrix(x))


# --- grad mode -------------------------------------------------------------

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _tracing() -> bool:
    return _GRAD_ENABLED[-1]


# --- frozen-value capture / replay ------------------------------------------
# stop_gradient outputs are captured on a record pass and replayed verbatim on
# later passes. Finite-difference probes use this so that the function probed
# is exactly the one the tape differentiates (straight-through estimators make
# the raw forward piecewise constant, which finite differences cannot see).

class FrozenTape:
    __slots__ = ("mode", "values", "pos")

    def __init__(self):
        self.mode = "record"
        self.values: list[np.ndarray] = []
        self.pos = 0


_FROZEN: list[FrozenTape | None] = [None]


@contextmanager
def record_frozen(tape: FrozenTape):
    tape.mode = "record"
    tape.values.clear()
    _FROZEN.append(tape)
    try:
        yield tape
    finally:
        _FROZEN.pop()


@contextmanager
def replay_frozen(tape: FrozenTape):
    tape.mode = "replay"
    tape.pos = 0
    _FROZEN.append(tape)
    try:
        yield tape
    finally:
        _FROZEN.pop()
        if tape.pos != len(tape.values):
            raise ContractError(
                f"frozen-value replay consumed {tape.pos} of {len(tape.values)} captures"
            )


def _frozen(v: np.ndarray) -> np.ndarray:
    tape = _FROZEN[-1]
    if tape is None:
        return v
    if tape.mode == "record":
        tape.values.append(v)
        return v
    out = tape.values[tape.pos]
    tape.pos += 1
    return out


# --- primitives --------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    (ar, ac), (br, bc) = a.value.shape, b.value.shape
    if (ar != br and 1 not in (ar, br)) or (ac != bc and 1 not in (ac, bc)):
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.value + b.value)
    if _tracing():
        ash, bsh = a.value.shape, b.value.shape
        out.parents = (a, b)
        out.vjp = lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = Tensor(a.value - b.value)
    if _tracing():
        ash, bsh = a.value.shape, b.value.shape
        out.parents = (a, b)
        out.vjp = lambda g: (_unbroadcast(g, ash), -_unbroadcast(g, bsh))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = Tensor(a.value * b.value)
    if _tracing():
        av, bv = a.value, b.value
        out.parents = (a, b)
        out.vjp = lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out = Tensor(a.value / b.value)
    if _tracing():
        av, bv = a.value, b.value
        out.parents = (a, b)
        out.vjp = lambda g: (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        )
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.value * c)
    if _tracing():
        out.parents = (a,)
        out.vjp = lambda g: (g * c,)
    return out


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.value + float(c))
    if _tracing():
        out.parents = (a,)
        out.vjp = lambda g: (g,)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} x {b.value.shape} (inner dims differ)")
    out = Tensor(a.value @ b.value)
    if _tracing():
        av, bv = a.value, b.value
        out.parents = (a, b)
        out.vjp = lambda g: (g @ bv.T, av.T @ g)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(np.ascontiguousarray(a.value.T))
    if _tracing():
        out.parents = (a,)
        out.vjp = lambda g: (g.T,)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.value))
    if _tracing():
        ov = out.value
        out.parents = (a,)
        out.vjp = lambda g: (g * ov,)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value))
    if _tracing():
        av = a.value
        out.parents = (a,)
        out.vjp = lambda g: (g / av,)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable two-sided form
    v = a.value
    out_v = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                     np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(out_v)
    if _tracing():
        ov = out.value
        out.parents = (a,)
        out.vjp = lambda g: (g * ov * (1.0 - ov),)
    return out


def gelu(a: Tensor) -> Tensor:
    """Exact gaussian-CDF GELU: x * Phi(x), Phi(x) = (1 + erf(x/sqrt(2))) / 2."""
    v = a.value
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    out = Tensor(v * cdf)
    if _tracing():
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        local = cdf + v * pdf
        out.parents = (a,)
        out.vjp = lambda g: (g * local,)
    return out


def softmax_rows(a: Tensor, sc: float = 1.0) -> Tensor:
    """Row-wise softmax of ``sc * a``, stabilized by row-max subtraction."""
    z = a.value * sc
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    if _tracing():
        out.parents = (a,)

        def vjp(g, y=y, sc=sc):
            t = g * y
            return ((t - y * t.sum(axis=1, keepdims=True)) * sc,)

        out.vjp = vjp
    return out


def logsumexp_rows(a: Tensor) -> Tensor:
    """Per-row log(sum(exp)); output M x 1."""
    m = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=1, keepdims=True)
    out = Tensor(m + np.log(s))
    if _tracing():
        soft = e / s
        out.parents = (a,)
        out.vjp = lambda g: (g * soft,)
    return out


def logsumexp_cols(a: Tensor) -> Tensor:
    """Per-column log(sum(exp)); output 1 x N."""
    m = a.value.max(axis=0, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=0, keepdims=True)
    out = Tensor(m + np.log(s))
    if _tracing():
        soft = e / s
        out.parents = (a,)
        out.vjp = lambda g: (g * soft,)
    return out


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    """Sum over all entries (axis=None -> 1x1), rows (axis=0 -> 1xN) or cols (axis=1 -> Mx1)."""
    if axis is None:
        out = Tensor(a.value.sum().reshape(1, 1))
    else:
        out = Tensor(a.value.sum(axis=axis, keepdims=True))
    if _tracing():
        sh = a.value.shape
        out.parents = (a,)
        out.vjp = lambda g: (np.broadcast_to(g, sh).copy(),)
    return out


def concat(parts, axis: int) -> Tensor:
    vals = [p.value for p in parts]
    out = Tensor(np.concatenate(vals, axis=axis))
    if _tracing():
        sizes = [v.shape[axis] for v in vals]
        offs = np.cumsum([0] + sizes)
        out.parents = tuple(parts)

        def vjp(g):
            if axis == 0:
                return tuple(g[offs[i]:offs[i + 1], :] for i in range(len(sizes)))
            return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(sizes)))

        out.vjp = vjp
    return out


def row_slice(a: Tensor, i0: int, i1: int) -> Tensor:
    out = Tensor(a.value[i0:i1, :].copy())
    if _tracing():
        sh = a.value.shape
        out.parents = (a,)

        def vjp(g):
            z = np.zeros(sh)
            z[i0:i1, :] = g
            return (z,)

        out.vjp = vjp
    return out


def col_slice(a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor(a.value[:, j0:j1].copy())
    if _tracing():
        sh = a.value.shape
        out.parents = (a,)

        def vjp(g):
            z = np.zeros(sh)
            z[:, j0:j1] = g
            return (z,)

        out.vjp = vjp
    return out


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.value[idx, :].copy())
    if _tracing():
        sh = a.value.shape
        out.parents = (a,)

        def vjp(g):
            z = np.zeros(sh)
            np.add.at(z, idx, g)
            return (z,)

        out.vjp = vjp
    return out


def stop_gradient(a: Tensor) -> Tensor:
    """Detach: value passes through (subject to frozen-tape capture), no gradient."""
    return Tensor(_frozen(a.value))


def onehot_argmax_cols(a: Tensor) -> Tensor:
    """Column-wise one-hot of the argmax row (ties -> lowest row index). Constant."""
    idx = a.value.argmax(axis=0)
    z = np.zeros_like(a.value)
    z[idx, np.arange(a.value.shape[1])] = 1.0
    return Tensor(z)


# --- backward ----------------------------------------------------------------

def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(loss: Tensor):
    """Populate .grad of every trainable Parameter reachable from ``loss``.

    Grads accumulate across calls; use ParamStore.zero_grads() to reset.
    """
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            if node.trainable:
                node.grad += g
            continue
        if node.vjp is None:
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


# --- finite differences --------------------------------------------------------

def finite_diff_check(fn, params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients of fn() and central differences.

    ``fn`` must be a zero-argument callable returning a scalar Tensor and must
    be deterministic per call (re-seed any noise internally). Stop-gradient
    values are captured on the first call and replayed for every probe so the
    probed function is the one the tape actually differentiates.

    Relative error per entry: |analytic - numeric| / max(1, |numeric|).
    """
    plist = params.trainable() if isinstance(params, ParamStore) else list(params)
    for p in plist:
        p.grad[...] = 0.0

    tape = FrozenTape()
    with record_frozen(tape):
        loss = fn()
    if loss.value.shape != (1, 1):
        raise ContractError("finite_diff_check requires a scalar function")
    backward(loss)
    analytic = [p.grad.copy() for p in plist]

    with no_grad(), replay_frozen(tape):
        base = fn().value[0, 0]
    if base != loss.value[0, 0]:
        raise ContractError(
            "fn is not deterministic under replay; freeze noise before checking"
        )

    worst = 0.0
    for p, an in zip(plist, analytic):
        flat = p.value.ravel()
        aflat = an.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad(), replay_frozen(tape):
                f_plus = fn().value[0, 0]
            flat[i] = orig - eps
            with no_grad(), replay_frozen(tape):
                f_minus = fn().value[0, 0]
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
