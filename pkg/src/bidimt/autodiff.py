"""Dense tensors with reverse-mode automatic differentiation on numpy.

Arrays are float32 by default; tests that need finite-difference precision
build their graphs in float64 instead. Every forward op validates that its
output is finite and raises NumericError (with the op name) otherwise, so
NaN/Inf never propagate silently. Gradients are accumulated by `backward`,
which consumes the graph.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigError, NumericError, UsageError

DEFAULT_DTYPE = np.float32

# Finite stand-in for -inf when masking attention scores; exp() of it
# underflows to exactly 0 in both float32 and float64.
NEG_FILL = -1e9

_grad_enabled = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _check_finite(arr: np.ndarray, op: str) -> None:
    # one-pass screen: any NaN/Inf poisons the sum; confirm before raising so
    # a legitimate finite array whose sum overflows is not misreported
    with np.errstate(over="ignore", invalid="ignore"):
        s = arr.sum()
    if not np.isfinite(s) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense float array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        elif dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Operator sugar; the real work happens in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, op: str, parents, vjp) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _grad_enabled[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, "add", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, "mul", (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * np.asarray(s, dtype=a.dtype)

    def vjp(g):
        return (g * np.asarray(s, dtype=g.dtype),)

    return _make(out, "scale", (a,), vjp)


def _flat_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x (..., n) @ w (n, m) as a single GEMM (numpy would loop otherwise)."""
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*lead, w.shape[-1])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ConfigError("matmul expects operands with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ConfigError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    if b.data.ndim == 2:
        out = _flat_matmul(a.data, b.data)
    else:
        out = a.data @ b.data

    def vjp(g):
        if b.data.ndim == 2:
            # "batched activations @ weight": collapse to single GEMMs
            ga = _flat_matmul(g, b.data.T)
            gb = a.data.reshape(-1, a.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            ga = _unbroadcast(ga, a.data.shape)
        else:
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into `table` (vocab x dim); ids may have any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ConfigError(
            f"embedding index out of range (max {int(ids.max())} vs table {table.data.shape[0]})"
        )
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _make(out, "embedding", (table,), vjp)


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather along axis 0 (used to expand shared encoder states per row)."""
    idx = np.asarray(idx)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, "take_rows", (x,), vjp)


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        gy = out * (g - (g * out).sum(axis=-1, keepdims=True))
        return (gy,)

    return _make(out, "softmax", (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def vjp(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, "log_softmax", (x,), vjp)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine; compose with mul/add)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    out = xc * inv

    def vjp(g):
        n = x.data.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - g_mean - out * gy_mean),)

    return _make(out, "layer_norm", (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _make(out, "relu", (x,), vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise UsageError("dropout in train mode needs an explicit rng")
    u = rng.random(x.data.shape, dtype=np.float32)
    keep = (u >= p).astype(x.dtype)
    keep *= np.asarray(1.0 / (1.0 - p), dtype=x.dtype)  # fold the rescale in
    out = x.data * keep

    def vjp(g):
        return (g * keep,)

    return _make(out, "dropout", (x,), vjp)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where `mask` is True by `value` (broadcastable)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)

    def vjp(g):
        return (_unbroadcast(np.where(mask, 0.0, g), x.data.shape),)

    return _make(out, "masked_fill", (x,), vjp)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, "concatenate", tuple(tensors), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, "transpose", (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _make(out, "reshape", (x,), vjp)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(np.asarray(out), "sum", (x,), vjp)


def mean_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def gather_last(x: Tensor, idx) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    idx = np.asarray(idx)
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return _make(out, "gather_last", (x,), vjp)


def cross_entropy(logits: Tensor, targets, label_smoothing: float = 0.0) -> Tensor:
    """Per-position negative log-likelihood, shape = targets.shape.

    With smoothing eps, the target distribution puts 1-eps on the gold
    token and eps/(V-1) on every other one.
    """
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ConfigError("cross_entropy expects 2-D logits (positions x vocab)")
    if targets.shape != logits.data.shape[:-1]:
        raise ConfigError(
            f"cross_entropy target shape {targets.shape} does not match logits {logits.data.shape}"
        )
    vocab = logits.data.shape[-1]
    eps = float(label_smoothing)
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {eps}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lsm = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    gold = np.take_along_axis(lsm, targets[..., None], axis=-1)[..., 0]
    if eps == 0.0:
        out = -gold
    else:
        off = eps / (vocab - 1)
        out = -((1.0 - eps - off) * gold + off * lsm.sum(axis=-1))

    def vjp(g):
        p = np.exp(lsm)
        q = np.full_like(p, eps / (vocab - 1))
        np.put_along_axis(q, targets[..., None], 1.0 - eps, axis=-1)
        return ((p - q) * g[..., None],)

    return _make(out.astype(logits.dtype), "cross_entropy", (logits,), vjp)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; consumes the recorded graph.

    Leaf tensors created with requires_grad=True accumulate into `.grad`;
    intermediates are released as soon as their gradient has been used.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._vjp is None:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._parents = ()
        node._vjp = None
