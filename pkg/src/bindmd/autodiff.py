"""Dense float64 tensors with reverse-mode automatic differentiation.

Small define-by-run engine: every operation records its parents and a
vector-Jacobian closure. The vjp closures are themselves written with tensor
operations, so calling ``grad(..., create_graph=True)`` yields gradients that
participate in the graph (needed for conservative forces -dE/dx that are then
trained against labels).
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Backward pass invoked on an invalid target or missing gradients."""


# --------------------------------------------------------------------------
# graph bookkeeping

_GRAD_ENABLED = True

# live/peak counts of graph-internal nodes, used by the adjoint memory check
_LIVE_GRAPH_NODES = 0
_PEAK_GRAPH_NODES = 0


def reset_graph_counters() -> None:
    global _LIVE_GRAPH_NODES, _PEAK_GRAPH_NODES
    _PEAK_GRAPH_NODES = _LIVE_GRAPH_NODES


def peak_graph_nodes() -> int:
    return _PEAK_GRAPH_NODES


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _grad_mode:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = self.enabled

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


_NODE_COUNTER = 0


class Tensor:
    """Dense multi-dimensional array participating in the autodiff graph.

    A tensor created from raw data is a constant unless ``requires_grad`` is
    set; constants never accumulate ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp",
                 "node_id", "__weakref__")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _vjp=None):
        global _NODE_COUNTER, _LIVE_GRAPH_NODES, _PEAK_GRAPH_NODES
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp
        _NODE_COUNTER += 1
        self.node_id = _NODE_COUNTER
        if _parents:
            _LIVE_GRAPH_NODES += 1
            if _LIVE_GRAPH_NODES > _PEAK_GRAPH_NODES:
                _PEAK_GRAPH_NODES = _LIVE_GRAPH_NODES

    def __del__(self):
        global _LIVE_GRAPH_NODES
        if self._parents:
            _LIVE_GRAPH_NODES -= 1

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def in_graph(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], vjp) -> Tensor:
    if _GRAD_ENABLED and any(p.in_graph for p in parents):
        return Tensor(data, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return reshape(g, shape)


# --------------------------------------------------------------------------
# primitive operations

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = div(g, b)
        gb = neg(mul(g, div(a, mul(b, b))))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (neg(g),)

    return _make(-a.data, (a,), vjp)


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)

    def vjp(g):
        return (mul(g, Tensor(sign)),)

    return _make(np.abs(a.data), (a,), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("power exponent must be a python scalar")
    out = a.data ** p

    def vjp(g):
        return (mul(g, mul(power(a, p - 1), p)),)

    return _make(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, out),)

    out = _make(out_data, (a,), vjp)
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    out = _make(out_data, (a,), vjp)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(out_data, (a,), vjp)
    return out


def silu(a) -> Tensor:
    """x * sigmoid(x); smooth activation used throughout the models."""
    return mul(a, sigmoid(a))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul requires at least 1-d operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        if a.ndim == 1 or b.ndim == 1:
            # fall back to explicit reshapes for vector operands
            a2 = reshape(a, (1, -1)) if a.ndim == 1 else a
            b2 = reshape(b, (-1, 1)) if b.ndim == 1 else b
            g2 = reshape(g, (a2.shape[0] if a2.ndim == 2 else -1,
                             b2.shape[-1]))
            ga = matmul(g2, transpose(b2))
            gb = matmul(transpose(a2), g2)
            return reshape(ga, a.shape), reshape(gb, b.shape)
        ga = _unbroadcast(matmul(g, transpose(b)), a.shape)
        gb = _unbroadcast(matmul(transpose(a), g), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) \
            if a.ndim >= 2 else tuple(range(a.ndim))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def vjp(g):
        return (reshape(g, orig),)

    return _make(a.data.reshape(shape), (a,), vjp)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gd = g
        if axis is not None and not keepdims:
            ax = (axis,) if isinstance(axis, int) else tuple(axis)
            shp = list(a.shape)
            for i in sorted(ax):
                shp[i if i >= 0 else len(shp) + i] = 1
            gd = reshape(gd, tuple(shp))
        return (mul(gd, Tensor(np.ones(a.shape))),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in ax]))
    return div(tsum(a, axis=axis, keepdims=keepdims), float(n))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for k in range(len(ts)):
            idx = [slice(None)] * out.ndim
            idx[axis] = slice(int(offs[k]), int(offs[k + 1]))
            grads.append(take(g, tuple(idx)))
        return tuple(grads)

    return _make(out, tuple(ts), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def take(a, idx) -> Tensor:
    """Indexing / row gather; gradient scatter-adds back into place."""
    a = as_tensor(a)
    if isinstance(idx, (list, np.ndarray)):
        idx = np.asarray(idx)
    out = a.data[idx]
    shape = a.shape

    def vjp(g):
        return (scatter(g, idx, shape),)

    return _make(out, (a,), vjp)


def scatter(src, idx, shape) -> Tensor:
    """Zeros of ``shape`` with ``src`` added at ``idx`` (duplicates sum)."""
    src = as_tensor(src)
    out = np.zeros(shape)
    np.add.at(out, idx, src.data)

    def vjp(g):
        return (take(g, idx),)

    return _make(out, (src,), vjp)


def where_const(cond: np.ndarray, a, b) -> Tensor:
    """Select with a constant condition (no gradient through ``cond``)."""
    a, b = as_tensor(a), as_tensor(b)
    c = Tensor(cond.astype(np.float64))
    return add(mul(c, a), mul(sub(1.0, c), b))


# --------------------------------------------------------------------------
# public spec surface: elementwise dispatcher

_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "abs": tabs,
}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Elementwise arithmetic; shapes must match exactly or one side scalar."""
    if op_kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    a = as_tensor(a)
    if op_kind in ("neg", "abs"):
        return _ELEMENTWISE[op_kind](a)
    b = as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(
            f"elementwise {op_kind}: shapes {a.shape} and {b.shape} are "
            "neither equal nor scalar-broadcastable")
    return _ELEMENTWISE[op_kind](a, b)


# --------------------------------------------------------------------------
# backward pass

def _topo_order(root: Tensor) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.in_graph and id(p) not in visited:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor], seed=None,
         create_graph: bool = False, accumulate: bool = False):
    """Gradients of ``output`` w.r.t. ``wrt`` tensors.

    ``seed`` is the upstream cotangent (defaults to ones). With
    ``create_graph`` the returned gradients stay in the graph and can be
    differentiated again. With ``accumulate`` every reachable leaf with
    ``requires_grad`` also gets its ``.grad`` buffer updated.
    """
    if seed is None:
        seed = Tensor(np.ones(output.shape))
    else:
        seed = as_tensor(seed)
    grads: dict[int, Tensor] = {id(output): seed}
    keep = {id(t): t for t in wrt}
    results: dict[int, Tensor] = {}
    order = _topo_order(output)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in keep:
            results[id(node)] = g
        if accumulate and node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros(node.shape)
            node.grad = node.grad + g.data
        if node._vjp is None:
            continue
        with _grad_mode(create_graph):
            parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.in_graph:
                continue
            prev = grads.get(id(p))
            if prev is None:
                grads[id(p)] = pg
            else:
                with _grad_mode(create_graph):
                    grads[id(p)] = add(prev, pg)
    out = []
    for t in wrt:
        g = results.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape))
        out.append(g)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable ``requires_grad`` leaf."""
    if loss.size != 1:
        raise GradientError(
            f"backward target must be scalar, got shape {loss.shape}")
    grad(loss, wrt=(), accumulate=True)


# --------------------------------------------------------------------------
# parameters

class ParamSet:
    """Named map of parameter tensors plus the RNG seed used to build them."""

    FORMAT_VERSION = 1
    MAGIC = b"BMDPARAMS\n"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.tensors: dict[str, Tensor] = {}

    def new_param(self, name: str, data) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def clone(self) -> "ParamSet":
        ps = ParamSet(self.seed)
        for name, t in self.tensors.items():
            ps.new_param(name, t.data.copy())
        return ps

    def load_values(self, other: "ParamSet") -> None:
        for name, t in self.tensors.items():
            t.data[...] = other.tensors[name].data

    # -- checkpoint container: json header line + little-endian f64 payload
    def save(self, path) -> None:
        header = {
            "format_version": self.FORMAT_VERSION,
            "seed": self.seed,
            "names": list(self.tensors),
            "shapes": [list(t.shape) for t in self.tensors.values()],
        }
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            for t in self.tensors.values():
                fh.write(struct.pack(f"<{t.size}d", *t.data.ravel()))

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            magic = fh.read(len(cls.MAGIC))
            if magic != cls.MAGIC:
                raise ValueError(f"{path}: not a parameter checkpoint")
            header = json.loads(fh.readline().decode())
            if header["format_version"] != cls.FORMAT_VERSION:
                raise ValueError(
                    f"{path}: unsupported checkpoint version "
                    f"{header['format_version']}")
            ps = cls(header["seed"])
            for name, shape in zip(header["names"], header["shapes"]):
                n = int(np.prod(shape)) if shape else 1
                raw = fh.read(8 * n)
                if len(raw) != 8 * n:
                    raise ValueError(f"{path}: truncated payload at {name!r}")
                vals = np.array(struct.unpack(f"<{n}d", raw)).reshape(shape)
                ps.new_param(name, vals)
        return ps


def init_affine(params: ParamSet, prefix: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, zero: bool = False) -> None:
    """Weights uniform in +-sqrt(1/fan_in), biases zero."""
    bound = np.sqrt(1.0 / fan_in)
    w = np.zeros((fan_in, fan_out)) if zero else \
        rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params.new_param(f"{prefix}.w", w)
    params.new_param(f"{prefix}.b", np.zeros(fan_out))


def init_mlp(params: ParamSet, prefix: str, dims: Sequence[int],
             rng: np.random.Generator, zero_last: bool = False) -> None:
    for i in range(len(dims) - 1):
        zero = zero_last and i == len(dims) - 2
        init_affine(params, f"{prefix}.layer{i}", dims[i], dims[i + 1],
                    rng, zero=zero)


def affine(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    w = params[f"{prefix}.w"]
    b = params[f"{prefix}.b"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"affine {prefix}: input extent {x.shape[-1]} != fan-in "
            f"{w.shape[0]}")
    return add(matmul(x, w), b)


def mlp(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    """Alternating affine + SiLU; the final layer is affine-only."""
    i = 0
    layers = []
    while f"{prefix}.layer{i}.w" in params:
        layers.append(f"{prefix}.layer{i}")
        i += 1
    if not layers:
        raise KeyError(f"no MLP layers under prefix {prefix!r}")
    h = as_tensor(x)
    for name in layers[:-1]:
        h = silu(affine(params, name, h))
    return affine(params, layers[-1], h)


def mean_agg(values: Tensor, groups: Sequence[Sequence[int]]) -> Tensor:
    """Per-group arithmetic mean of rows; an empty group yields a zero row."""
    values = as_tensor(values)
    n = values.shape[0]
    mat = np.zeros((len(groups), n))
    for gi, members in enumerate(groups):
        for j in members:
            if not 0 <= j < n:
                raise IndexError(
                    f"group {gi} index {j} out of range for {n} rows")
        if members:
            mat[gi, list(members)] += 1.0 / len(members)
    return matmul(Tensor(mat), values)


def segment_mean(values: Tensor, segment_ids: np.ndarray,
                 num_segments: int) -> Tensor:
    """Mean of rows grouped by ``segment_ids``; empty segments are zero."""
    values = as_tensor(values)
    counts = np.bincount(segment_ids, minlength=num_segments).astype(float)
    counts[counts == 0] = 1.0
    summed = scatter(values, np.asarray(segment_ids),
                     (num_segments,) + values.shape[1:])
    denom = counts.reshape((num_segments,) + (1,) * (values.ndim - 1))
    return div(summed, Tensor(denom))


# --------------------------------------------------------------------------
# verification and optimizers

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               h: float = 1e-5) -> float:
    """Max relative error between backward() and central finite differences."""
    x0 = x.data.copy()
    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise GradientError("grad_check target function must be scalar")
    analytic = grad(out, [probe])[0].data
    numeric = np.zeros_like(x0)
    flat = x0.ravel()
    for i in range(flat.size):
        for s, dst in ((+h, +1.0), (-h, -1.0)):
            pert = flat.copy()
            pert[i] += s
            with no_grad():
                val = f(Tensor(pert.reshape(x0.shape))).item()
            numeric.ravel()[i] += dst * val
    numeric /= (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ParamSet) -> None:
        if all(t.grad is None for t in params.tensors.values()):
            raise GradientError("no parameter has a gradient; call "
                                "backward() before stepping")
        for name, t in params.tensors.items():
            if t.grad is None:
                continue
            t.data -= self.lr * t.grad
        params.zero_grad()


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet) -> None:
        if all(t.grad is None for t in params.tensors.values()):
            raise GradientError("no parameter has a gradient; call "
                                "backward() before stepping")
        self.t += 1
        for name, t in params.tensors.items():
            if t.grad is None:
                # parameters outside the active loss path are left alone
                continue
            m = self.m.setdefault(name, np.zeros(t.shape))
            v = self.v.setdefault(name, np.zeros(t.shape))
            m[...] = self.beta1 * m + (1 - self.beta1) * t.grad
            v[...] = self.beta2 * v + (1 - self.beta2) * t.grad ** 2
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            t.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        params.zero_grad()


def make_optimizer(kind: str, lr: float):
    if kind.lower() == "sgd":
        return SGD(lr)
    if kind.lower() == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def optimizer_step(params: ParamSet, kind: str, lr: float,
                   opt=None):
    """Single optimizer update; returns the (stateful) optimizer used."""
    if opt is None:
        opt = make_optimizer(kind, lr)
    opt.step(params)
    return opt
