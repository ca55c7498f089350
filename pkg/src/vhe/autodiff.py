"""Dense reverse-mode differentiation over numpy arrays.

Every operation is registered in ``OPS`` with a forward and a backward rule.
Calling an op on plain arrays just evaluates it; as soon as one input is a
:class:`Tensor` the result is recorded on that tensor's :class:`Graph`, so the
same model code runs both as a cheap forward pass and as a differentiable one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Op:
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., list]


OPS: dict[str, Op] = {}


def register(kind: str):
    def deco(cls):
        OPS[kind] = Op(cls.forward, cls.backward)
        return cls

    return deco


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shapes(kind, *arrs):
    try:
        return np.broadcast_shapes(*(a.shape for a in arrs))
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {[a.shape for a in arrs]}") from None


# ---------------------------------------------------------------- elementwise


@register("add")
class _Add:
    def forward(a, b):
        _broadcast_shapes("add", a, b)
        return a + b, None

    def backward(g, ins, out, ctx):
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)]


@register("sub")
class _Sub:
    def forward(a, b):
        _broadcast_shapes("sub", a, b)
        return a - b, None

    def backward(g, ins, out, ctx):
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)]


@register("mul")
class _Mul:
    def forward(a, b):
        _broadcast_shapes("mul", a, b)
        return a * b, None

    def backward(g, ins, out, ctx):
        a, b = ins
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


@register("div")
class _Div:
    def forward(a, b):
        _broadcast_shapes("div", a, b)
        return a / b, None

    def backward(g, ins, out, ctx):
        a, b = ins
        return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]


@register("neg")
class _Neg:
    def forward(a):
        return -a, None

    def backward(g, ins, out, ctx):
        return [-g]


@register("square")
class _Square:
    def forward(a):
        return a * a, None

    def backward(g, ins, out, ctx):
        return [2.0 * ins[0] * g]


@register("sqrt")
class _Sqrt:
    def forward(a):
        return np.sqrt(a), None

    def backward(g, ins, out, ctx):
        return [g * 0.5 / out]


@register("exp")
class _Exp:
    def forward(a):
        return np.exp(a), None

    def backward(g, ins, out, ctx):
        return [g * out]


@register("log")
class _Log:
    def forward(a):
        return np.log(a), None

    def backward(g, ins, out, ctx):
        return [g / ins[0]]


@register("tanh")
class _Tanh:
    def forward(a):
        return np.tanh(a), None

    def backward(g, ins, out, ctx):
        return [g * (1.0 - out * out)]


@register("sigmoid")
class _Sigmoid:
    def forward(a):
        # split form avoids overflow in exp for large |a|
        e = np.exp(-np.abs(a))
        out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return out, None

    def backward(g, ins, out, ctx):
        return [g * out * (1.0 - out)]


@register("clip")
class _Clip:
    def forward(a, lo, hi):
        return np.clip(a, lo, hi), None

    def backward(g, ins, out, ctx, lo, hi):
        a = ins[0]
        return [g * ((a > lo) & (a < hi))]


@register("detach")
class _Detach:
    def forward(a):
        return a.copy(), None

    def backward(g, ins, out, ctx):
        return [None]


# ------------------------------------------------------------ reductions etc.


@register("sum")
class _Sum:
    def forward(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims), None

    def backward(g, ins, out, ctx, axis=None, keepdims=False):
        a = ins[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, a.shape).copy()]


@register("mean")
class _Mean:
    def forward(a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims), None

    def backward(g, ins, out, ctx, axis=None, keepdims=False):
        a = ins[0]
        n = a.size / max(np.size(out), 1)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g / n, a.shape).copy()]


@register("matmul")
class _Matmul:
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from None
        return a @ b, None

    def backward(g, ins, out, ctx):
        a, b = ins
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


@register("reshape")
class _Reshape:
    def forward(a, shape):
        try:
            return a.reshape(shape), None
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None

    def backward(g, ins, out, ctx, shape):
        return [g.reshape(ins[0].shape)]


@register("swapaxes")
class _Swap:
    def forward(a, axis1, axis2):
        return np.swapaxes(a, axis1, axis2), None

    def backward(g, ins, out, ctx, axis1, axis2):
        return [np.swapaxes(g, axis1, axis2)]


@register("getitem")
class _GetItem:
    def forward(a, key):
        return a[key], None

    def backward(g, ins, out, ctx, key):
        ga = np.zeros_like(ins[0])
        np.add.at(ga, key, g)
        return [ga]


@register("gather")
class _Gather:
    """Row lookup ``table[ids]``; ``ids`` is an integer array of any shape."""

    def forward(table, ids):
        return table[ids], None

    def backward(g, ins, out, ctx, ids):
        gt = np.zeros_like(ins[0])
        np.add.at(gt, ids, g)
        return [gt]


@register("concat")
class _Concat:
    def forward(*arrs, axis=0):
        try:
            return np.concatenate(arrs, axis=axis), [a.shape[axis] for a in arrs]
        except ValueError:
            raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrs]}") from None

    def backward(g, ins, out, ctx, axis=0):
        cuts = np.cumsum(ctx)[:-1]
        return list(np.split(g, cuts, axis=axis))


@register("masked_softmax")
class _MaskedSoftmax:
    """Softmax along ``axis`` restricted to ``mask``; masked entries are exactly 0."""

    def forward(a, mask, axis=-1):
        mask = np.broadcast_to(mask, a.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("masked_softmax: a slice has no unmasked entries")
        shifted = np.where(mask, a, -np.inf)
        shifted = shifted - shifted.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
        return e / e.sum(axis=axis, keepdims=True), None

    def backward(g, ins, out, ctx, mask, axis=-1):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return [out * (g - inner)]


@register("masked_max")
class _MaskedMax:
    """Max-pool along ``axis`` over unmasked entries; ties go to the lowest index."""

    def forward(a, mask=None, axis=-1):
        if mask is not None:
            mask = np.broadcast_to(mask, a.shape)
            if not mask.any(axis=axis).all():
                raise ValueError("masked_max: a slice has no unmasked entries")
            a = np.where(mask, a, -np.inf)
        idx = np.argmax(a, axis=axis)
        out = np.take_along_axis(a, np.expand_dims(idx, axis), axis=axis)
        return np.squeeze(out, axis=axis), idx

    def backward(g, ins, out, ctx, mask=None, axis=-1):
        ga = np.zeros_like(ins[0])
        np.put_along_axis(ga, np.expand_dims(ctx, axis), np.expand_dims(g, axis), axis=axis)
        return [ga]


@register("conv1d")
class _Conv1d:
    """Same-padded stride-1 convolution.

    ``x`` is (..., C, P) and ``w`` is (K, C, l) with odd ``l``; output (..., K, P).
    """

    def forward(x, w):
        if w.ndim != 3 or x.ndim < 2 or x.shape[-2] != w.shape[1] or w.shape[2] % 2 != 1:
            raise ShapeError(f"conv1d: incompatible shapes x{x.shape} w{w.shape}")
        half = w.shape[2] // 2
        pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
        xp = np.pad(x, pad)
        win = np.lib.stride_tricks.sliding_window_view(xp, w.shape[2], axis=-1)
        # win: (..., C, P, l)
        out = np.einsum("...cpl,kcl->...kp", win, w, optimize=True)
        return out, None

    def backward(g, ins, out, ctx):
        x, w = ins
        l = w.shape[2]
        half = l // 2
        P = x.shape[-1]
        pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
        xp = np.pad(x, pad)
        win = np.lib.stride_tricks.sliding_window_view(xp, l, axis=-1)
        gw = np.einsum("...kp,...cpl->kcl", g, win, optimize=True)
        gwin = np.einsum("...kp,kcl->...cpl", g, w, optimize=True)
        gxp = np.zeros_like(xp)
        for t in range(l):
            gxp[..., t : t + P] += gwin[..., t]
        return [gxp[..., half : half + P], gw]


# ---------------------------------------------------------------- graph


class Tensor:
    """Handle to a node on a :class:`Graph`."""

    __array_ufunc__ = None

    def __init__(self, graph: "Graph", node: int, value: np.ndarray):
        self.graph = graph
        self.node = node
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(node={self.node}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        return apply("getitem", [self], key=key)


@dataclass
class Node:
    kind: str
    inputs: list  # node ids, or None for constant inputs
    attrs: dict
    value: np.ndarray
    ctx: Any = None
    param: str | None = None


@dataclass
class Graph:
    """Append-only tape. Parameters are looked up by name in ``params``."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    nodes: list[Node] = field(default_factory=list)
    _param_nodes: dict[str, int] = field(default_factory=dict)
    _const_inputs: dict[int, list] = field(default_factory=dict)

    def param(self, name: str, value: np.ndarray | None = None) -> Tensor:
        if name in self._param_nodes:
            nid = self._param_nodes[name]
            return Tensor(self, nid, self.nodes[nid].value)
        if value is not None:
            self.params[name] = value
        v = np.asarray(self.params[name], dtype=np.float64)
        self.nodes.append(Node("param", [], {}, v, param=name))
        nid = len(self.nodes) - 1
        self._param_nodes[name] = nid
        return Tensor(self, nid, v)

    def constant(self, value) -> Tensor:
        v = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node("const", [], {}, v))
        return Tensor(self, len(self.nodes) - 1, v)

    def record(self, kind, inputs, attrs) -> Tensor:
        op = OPS[kind]
        vals = [x.value if isinstance(x, Tensor) else x for x in inputs]
        with np.errstate(all="ignore"):  # non-finite results are reported below
            out, ctx = op.forward(*vals, **attrs)
        out = np.asarray(out, dtype=np.float64)
        _check_finite(kind, vals, out)
        ids = [x.node if isinstance(x, Tensor) else None for x in inputs]
        self.nodes.append(Node(kind, ids, attrs, out, ctx))
        nid = len(self.nodes) - 1
        self._const_inputs[nid] = [None if isinstance(x, Tensor) else x for x in inputs]
        return Tensor(self, nid, out)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``loss`` w.r.t. every registered parameter."""
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        param_grads: dict[int, np.ndarray] = {}
        for nid in range(loss.node, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "param":
                param_grads[nid] = g
                continue
            if node.kind == "const":
                continue
            consts = self._const_inputs[nid]
            vals = [
                self.nodes[i].value if i is not None else c
                for i, c in zip(node.inputs, consts)
            ]
            in_grads = OPS[node.kind].backward(g, vals, node.value, node.ctx, **node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if i is None or gi is None:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        out = {}
        for name, nid in self._param_nodes.items():
            g = param_grads.get(nid)
            out[name] = np.zeros_like(self.nodes[nid].value) if g is None else g
        return out


def _check_finite(kind, vals, out):
    if not np.all(np.isfinite(out)):
        shapes = [np.shape(v) for v in vals]
        bad = int(np.size(out) - np.count_nonzero(np.isfinite(out)))
        raise NonFiniteError(f"{kind}: {bad} non-finite outputs (input shapes {shapes})")


def apply(kind: str, inputs: list, **attrs):
    """Run op ``kind``. Records on a graph iff some input is a Tensor."""
    if kind not in OPS:
        raise KeyError(f"unknown op kind {kind!r}")
    graph = None
    for x in inputs:
        if isinstance(x, Tensor):
            if graph is not None and x.graph is not graph:
                raise ValueError(f"{kind}: inputs live on different graphs")
            graph = x.graph
    if graph is not None:
        ins = [x if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64) for x in inputs]
        return graph.record(kind, ins, attrs)
    vals = [np.asarray(x, dtype=np.float64) for x in inputs]
    with np.errstate(all="ignore"):
        out, _ = OPS[kind].forward(*vals, **attrs)
    out = np.asarray(out, dtype=np.float64)
    _check_finite(kind, vals, out)
    return out


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def add(a, b):
    return apply("add", [a, b])


def sub(a, b):
    return apply("sub", [a, b])


def mul(a, b):
    return apply("mul", [a, b])


def div(a, b):
    return apply("div", [a, b])


def neg(a):
    return apply("neg", [a])


def square(a):
    return apply("square", [a])


def sqrt(a):
    return apply("sqrt", [a])


def exp(a):
    return apply("exp", [a])


def log(a):
    return apply("log", [a])


def tanh(a):
    return apply("tanh", [a])


def sigmoid(a):
    return apply("sigmoid", [a])


def clip(a, lo, hi):
    return apply("clip", [a], lo=lo, hi=hi)


def detach(a):
    return apply("detach", [a])


def sum(a, axis=None, keepdims=False):  # noqa: A001
    return apply("sum", [a], axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return apply("mean", [a], axis=axis, keepdims=keepdims)


def matmul(a, b):
    return apply("matmul", [a, b])


def reshape(a, shape):
    return apply("reshape", [a], shape=tuple(shape))


def swapaxes(a, axis1, axis2):
    return apply("swapaxes", [a], axis1=axis1, axis2=axis2)


def gather(table, ids):
    return apply("gather", [table], ids=np.asarray(ids))


def concat(arrs, axis=0):
    return apply("concat", list(arrs), axis=axis)


def masked_softmax(a, mask, axis=-1):
    return apply("masked_softmax", [a], mask=np.asarray(mask, dtype=bool), axis=axis)


def masked_max(a, mask=None, axis=-1):
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return apply("masked_max", [a], mask=mask, axis=axis)


def conv1d(x, w):
    return apply("conv1d", [x, w])


# ------------------------------------------------------------ gradient check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            status = "pass" if err < self.tolerance else "FAIL"
            out.append(f"{name}\t{err:.3e}\t{status}")
        return out


def check_gradients(
    builder: Callable[[Graph], Tensor],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    ``builder`` receives a fresh Graph holding ``params`` and must return a scalar
    Tensor; it has to be deterministic. Per parameter the reported value is the
    largest ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`` over the checked entries.
    ``max_entries`` limits the number of (randomly chosen) entries per parameter.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    g = Graph(dict(params))
    loss = builder(g)
    ad = g.backward(loss)
    rng = np.random.default_rng(seed)

    def f(p):
        return float(value(builder(Graph(p))))

    errors = {}
    for name, base in params.items():
        flat_idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            flat_idx = rng.choice(base.size, size=max_entries, replace=False)
        worst = 0.0
        for k in flat_idx:
            idx = np.unravel_index(k, base.shape)
            p_plus = dict(params)
            p_minus = dict(params)
            vp = base.copy()
            vp[idx] += h
            vm = base.copy()
            vm[idx] -= h
            p_plus[name] = vp
            p_minus[name] = vm
            fd = (f(p_plus) - f(p_minus)) / (2 * h)
            ga = float(ad[name][idx])
            rel = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
            worst = max(worst, rel)
        errors[name] = worst
    return GradCheckReport(errors, tolerance)


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    return graph.backward(loss)
