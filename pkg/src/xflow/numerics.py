"""Dense tensors with reverse-mode differentiation, seeded RNG streams, grad checking.

Every tensor wraps a numpy array.  Operations on tensors record a closure that
maps the output gradient to input gradients; ``backward`` walks the recorded
graph in reverse topological order.  The primitive set is deliberately small:

    add sub neg mul div pow (scalar exponent) matmul
    exp log tanh sigmoid sin cos sqrt abs
    sum mean max logsumexp softmax
    reshape transpose getitem concat

Anything else (layer norm, GELU, attention, ...) is a composition of these.
"""
from __future__ import annotations

import contextlib
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)

SUPPORTED_OPS = frozenset(
    {
        "add", "sub", "neg", "mul", "div", "pow", "matmul",
        "exp", "log", "tanh", "sigmoid", "sin", "cos", "sqrt", "abs",
        "sum", "mean", "max", "logsumexp", "softmax",
        "reshape", "transpose", "getitem", "concat",
        "normalize", "gelu", "attention", "affine",
    }
)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ContractViolation(ValueError):
    """Raised when an operation's precondition does not hold."""


class UnsupportedOperationError(RuntimeError):
    pass


class NumericFailure(FloatingPointError):
    """Non-finite values appeared; ``where`` identifies the layer or step."""

    def __init__(self, message: str, where: int | None = None, detail=None):
        super().__init__(message)
        self.where = where
        self.detail = detail


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum over the axes that broadcasting expanded
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, backward_fn=None) -> "Tensor":
        """Build a graph node.  ``backward_fn(g)`` returns one gradient (or None) per parent."""
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        out._op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    # ---- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def op(self) -> str:
        return self._op

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # ---- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    # ---- method forms -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return Tensor.from_op(
        a.data + b.data, (a, b), "add",
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return Tensor.from_op(
        a.data - b.data, (a, b), "sub",
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data * b.data, (a, b), "mul", bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), "div", bw)


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise UnsupportedOperationError("pow supports scalar exponents only")
    e = float(exponent)
    out = a.data ** e
    return Tensor.from_op(
        out, (a,), "pow",
        lambda g: (g * e * a.data ** (e - 1.0),),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # batch of rows times one matrix: fold leading axes into a single GEMM
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def bw_folded(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return Tensor.from_op(out, (a, b), "matmul", bw_folded)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data @ b.data, (a, b), "matmul", bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return Tensor.from_op(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def sin(a: Tensor) -> Tensor:
    return Tensor.from_op(np.sin(a.data), (a,), "sin", lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return Tensor.from_op(np.cos(a.data), (a,), "cos", lambda g: (-g * np.sin(a.data),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def tabs(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return Tensor.from_op(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes) if axes else g
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape
    return Tensor.from_op(
        np.asarray(out), (a,), "sum",
        lambda g: (_expand_reduced(g, shape, axes, keepdims),),
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.shape
    scale = np.asarray(1.0 / count, dtype=a.dtype)
    return Tensor.from_op(
        np.asarray(out), (a,), "mean",
        lambda g: (_expand_reduced(g * scale, shape, axes, keepdims),),
    )


def tmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out_k = a.data.max(axis=axes, keepdims=True)
    out = out_k if keepdims else np.squeeze(out_k, axis=axes)

    def bw(g):
        mask = a.data == out_k
        mask = mask / mask.sum(axis=axes, keepdims=True)  # ties split evenly
        return (_expand_reduced(g, a.shape, axes, keepdims) * mask,)

    return Tensor.from_op(np.asarray(out), (a,), "max", bw)


def logsumexp(a: Tensor, axis=-1, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    s = np.log(np.exp(a.data - m).sum(axis=axes, keepdims=True)) + m
    out = s if keepdims else np.squeeze(s, axis=axes)

    def bw(g):
        p = np.exp(a.data - s)
        return (_expand_reduced(g, a.shape, axes, keepdims) * p,)

    return Tensor.from_op(np.asarray(out), (a,), "logsumexp", bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), "softmax", bw)


def normalize(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean, unit-variance over the last axis (layer norm without affine)."""
    y = a.data - a.data.mean(axis=-1, keepdims=True)
    inv = np.sqrt(np.square(y).mean(axis=-1, keepdims=True) + eps)
    np.reciprocal(inv, out=inv)
    y *= inv

    def bw(g):
        gy = (g * y).mean(axis=-1, keepdims=True)
        out = y * gy
        np.subtract(g, out, out=out)
        out -= g.mean(axis=-1, keepdims=True)
        out *= inv
        return (out,)

    return Tensor.from_op(y, (a,), "normalize", bw)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """tanh-form GELU."""
    x = a.data
    th = np.square(x)
    th *= _GELU_A * _GELU_C
    th += _GELU_C
    th *= x
    np.tanh(th, out=th)
    out = th + 1.0
    out *= x
    out *= 0.5

    def bw(g):
        d = np.square(x)
        d *= 3 * _GELU_A * _GELU_C
        d += _GELU_C
        d *= x
        s = np.square(th)
        np.subtract(1.0, s, out=s)
        d *= s
        d += th
        d += 1.0
        d *= 0.5
        d *= g
        return (d,)

    return Tensor.from_op(out, (a,), "gelu", bw)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """softmax(q k^T * scale) v over the last two axes."""
    p = q.data @ np.swapaxes(k.data, -1, -2)
    p *= scale
    p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def bw(g):
        gs = g @ np.swapaxes(v.data, -1, -2)
        gs -= (gs * p).sum(axis=-1, keepdims=True)
        gs *= p
        gs *= scale
        gq = gs @ k.data if q.requires_grad else None
        gk = np.swapaxes(gs, -1, -2) @ q.data if k.requires_grad else None
        gv = np.swapaxes(p, -1, -2) @ g if v.requires_grad else None
        return gq, gk, gv

    return Tensor.from_op(out, (q, k, v), "attention", bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with w of rank 2; leading axes of x fold into one GEMM."""
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.shape[-1] != w.shape[0]:
        raise ContractViolation(f"affine shapes {x.shape} @ {w.shape} + {b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    out += b.data
    out = out.reshape(x.shape[:-1] + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return Tensor.from_op(out, (x, w, b), "affine", bw)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(
        np.transpose(a.data, axes), (a,), "transpose",
        lambda g: (np.transpose(g, inv),),
    )


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        raise ContractViolation("index with integer arrays, not tensors")
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(np.asarray(a.data[idx]), (a,), "getitem", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        out = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    data = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor.from_op(data, tensors, "concat", bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Composite: reshape each operand to add an axis, then concatenate."""
    parts = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        parts.append(reshape(t, tuple(shape)))
    return concat(parts, axis=axis)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss``.

    Returns a dict keyed by leaf tensor.  Leaves in ``params`` that the loss
    does not depend on map to zeros.  Also stores each gradient in ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        if node._op != "leaf" and node.requires_grad and (node._op not in SUPPORTED_OPS or node._backward is None):
            raise UnsupportedOperationError(f"no gradient rule for operation {node._op!r}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._op == "leaf" or not node._parents:
            if node._op == "leaf" and node.requires_grad:
                leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg).astype(parent.dtype, copy=False)

    if params is not None:
        for p in params:
            if p not in leaves:
                leaves[p] = np.zeros_like(p.data)
    for leaf, g in leaves.items():
        leaf.grad = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    return {leaf: leaf.grad for leaf in leaves}


# ---------------------------------------------------------------------------
# randomness


class Rng:
    """Counter-based (Philox) generator with named, independent substreams."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ContractViolation("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, name: str | int) -> "Rng":
        key = name if isinstance(name, int) else zlib.crc32(name.encode("utf-8"))
        return Rng(self.seed, self.path + (key,))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.random(shape, dtype=dtype)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def truncated_normal(self, shape, std: float, dtype=np.float32) -> np.ndarray:
        # redraw outside +-2 std
        out = self._gen.standard_normal(shape)
        bad = np.abs(out) > 2.0
        while bad.any():
            out[bad] = self._gen.standard_normal(int(bad.sum()))
            bad = np.abs(out) > 2.0
        return (out * std).astype(dtype)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradReport:
    max_rel_error: float
    passed: bool
    eps: float
    tol: float
    per_param: list[float] = field(default_factory=list)
    # coordinates where one-sided differences disagree (kinks, discontinuities)
    unreliable: list[tuple[int, int]] = field(default_factory=list)

    @property
    def reliable(self) -> bool:
        return not self.unreliable


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: Rng | None = None,
) -> GradReport:
    """Compare ``backward`` against central differences on float64 params.

    ``f`` is called with no arguments and must rebuild its graph from the
    current values of ``params`` (which are perturbed in place).  With
    ``max_coords`` set, only that many randomly chosen coordinates per
    parameter are checked.
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    for p in params:
        if p.dtype != np.float64:
            raise ContractViolation("grad_check requires float64 parameters")

    loss = f()
    analytic = backward(loss, params)
    rng = rng or Rng(0)
    per_param = []
    unreliable = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        ga = analytic[p].reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.generator.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            f0 = f().item()
            num = (fp - fm) / (2.0 * eps)
            rel = abs(ga[i] - num) / max(abs(ga[i]), abs(num), 1e-8)
            worst = max(worst, float(rel))
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if abs(fwd - bwd) > max(1e-3 * max(abs(fwd), abs(bwd)), 1e-2):
                unreliable.append((pi, int(i)))
        per_param.append(worst)
    max_err = max(per_param) if per_param else 0.0
    return GradReport(max_err, bool(max_err <= tol), eps, tol, per_param, unreliable)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def is_finite(t: Tensor | np.ndarray) -> bool:
    arr = t.data if isinstance(t, Tensor) else t
    return bool(np.isfinite(arr).all())


__all__ = [
    "ContractViolation", "GradReport", "NumericFailure", "Rng", "SUPPORTED_OPS", "Tensor",
    "UnsupportedOperationError", "add", "as_tensor", "backward", "concat", "cos", "div", "exp",
    "getitem", "grad_check", "is_finite", "log", "logsumexp", "matmul", "mean", "mul", "neg", "no_grad",
    "parameter", "power", "reshape", "sigmoid", "sin", "softmax", "sqrt", "stack", "sub", "tabs",
    "tanh", "tmax", "transpose", "tsum",
]
