"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a node on a tape (the node keeps its forward
value, the parents, and one vector-Jacobian closure per parent). Calling
``backward()`` on a scalar output walks the tape once in reverse
topological order and accumulates exact gradients into every leaf with
``requires_grad`` set. The tape is acyclic by construction and replays
deterministically: identical inputs produce bit-identical values.

All values are checked finite on creation; an operation that produces
NaN or Inf raises ``NonFiniteError`` naming the operation.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, NonFiniteError, ShapeError, UsageError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of the original operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus its position on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjps", "_backprop_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor constructed with NaN or Inf values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents = ()
        self._vjps = ()
        self._backprop_done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- tape construction ---------------------------------------------------

    @staticmethod
    def _node(data, parents_vjps, op: str) -> "Tensor":
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"operation {op!r} produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = arr
        out.grad = None
        out.op = op
        out._backprop_done = False
        live = tuple((p, vjp) for p, vjp in parents_vjps if p.requires_grad)
        out.requires_grad = bool(live)
        out.parents = tuple(p for p, _ in live)
        out._vjps = tuple(live)
        return out

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        The output must be scalar-valued and each tape may be walked only
        once; build a fresh graph before differentiating again.
        """
        if self.data.size != 1:
            raise UsageError("backward requires a scalar-valued output")
        if self._backprop_done:
            raise UsageError("this output was already backpropagated; rebuild the tape first")
        self._backprop_done = True
        if not self.requires_grad:
            return

        topo = []
        seen = {id(self)}
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjps:
                for parent, vjp in node._vjps:
                    contrib = vjp(g)
                    prev = grads.get(id(parent))
                    grads[id(parent)] = contrib if prev is None else prev + contrib
            else:
                node.grad = g if node.grad is None else node.grad + g

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


# -- elementwise binary ops ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return Tensor._node(
        out,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
        "add",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return Tensor._node(
        out,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return Tensor._node(
        out,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
        "div",
    )


# -- elementwise unary ops ----------------------------------------------------


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return Tensor._node(out, [(x, lambda g: g * out)], "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return Tensor._node(out, [(x, lambda g: g / x.data)], "log")


def pow_const(x, p: float) -> Tensor:
    x = _as_tensor(x)
    p = float(p)
    out = x.data**p
    return Tensor._node(out, [(x, lambda g: g * p * x.data ** (p - 1.0))], "pow")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor._node(np.where(mask, x.data, 0.0), [(x, lambda g: g * mask)], "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    """Elementwise x for x >= 0 else slope * x; slope must lie in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must be in (0, 1), got {slope}")
    x = _as_tensor(x)
    mask = x.data >= 0
    out = np.where(mask, x.data, slope * x.data)
    return Tensor._node(out, [(x, lambda g: g * np.where(mask, 1.0, slope))], "leaky_relu")


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor) with zero subgradient on the clamped side."""
    x = _as_tensor(x)
    mask = x.data > floor
    return Tensor._node(np.where(mask, x.data, floor), [(x, lambda g: g * mask)], "clip_min")


# -- reductions -----------------------------------------------------------------


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.data.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, x.data.shape).copy()

    return Tensor._node(out, [(x, vjp)], "sum")


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- matrix ops -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return Tensor._node(
        out,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
        "matmul",
    )


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    return Tensor._node(x.data.T, [(x, lambda g: g.T)], "transpose")


def reshape(x, *shape) -> Tensor:
    x = _as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.data.reshape(shape)
    return Tensor._node(out, [(x, lambda g: g.reshape(x.data.shape))], "reshape")


def narrow(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis of a 2-D tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("narrow expects a 2-D tensor")
    if axis == 0:
        out = x.data[start:stop, :]
    elif axis == 1:
        out = x.data[:, start:stop]
    else:
        raise ShapeError("narrow axis must be 0 or 1")

    def vjp(g):
        full = np.zeros_like(x.data)
        if axis == 0:
            full[start:stop, :] = g
        else:
            full[:, start:stop] = g
        return full

    return Tensor._node(out, [(x, vjp)], "narrow")


# -- row-structured ops -----------------------------------------------------------


def softmax_rows(x) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - inner)

    return Tensor._node(out, [(x, vjp)], "softmax_rows")


def log_softmax_rows(x) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return g - soft * g.sum(axis=-1, keepdims=True)

    return Tensor._node(out, [(x, vjp)], "log_softmax_rows")


def l2_normalize_rows(x, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(its l2 norm, eps); zero rows stay zero."""
    if eps <= 0:
        raise ConfigError(f"l2_normalize_rows eps must be positive, got {eps}")
    x = _as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, eps)
    out = x.data / denom

    def vjp(g):
        base = g / denom
        live = norms > eps
        proj = (g * x.data).sum(axis=-1, keepdims=True) * x.data / denom**3
        return np.where(live, base - proj, base)

    return Tensor._node(out, [(x, vjp)], "l2_normalize_rows")


# -- gather / scatter over node and edge indices -----------------------------------


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Select rows x[index]; the adjoint scatter-adds back."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def vjp(g):
        if x.data.ndim == 2:
            return kernels.scatter_add_rows(index, g, x.data.shape[0])
        return kernels.scatter_add_vec(index, g, x.data.shape[0])

    return Tensor._node(out, [(x, vjp)], "gather_rows")


def scatter_rows(x, index: np.ndarray, n_rows: int) -> Tensor:
    """Accumulate row e of x into output row index[e]; output is (n_rows, d)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("scatter_rows expects a 2-D tensor of edge rows")
    index = np.asarray(index, dtype=np.int64)
    out = kernels.scatter_add_rows(index, x.data, n_rows)
    return Tensor._node(out, [(x, lambda g: g[index])], "scatter_rows")


def select_cols(x, cols: np.ndarray) -> Tensor:
    """Pick one entry per row, out[i] = x[i, cols[i]]."""
    x = _as_tensor(x)
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, cols]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[rows, cols] = g
        return full

    return Tensor._node(out, [(x, vjp)], "select_cols")
