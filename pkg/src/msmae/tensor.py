"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (patch embeddings, attention, convolutional upsampling,
losses) is expressed through the operations in this module.  Values are numpy
arrays in float64 by default; float32 is supported for faster training runs.
Tensor data is treated as immutable once created: operations build a graph of
closures and ``backward`` on a scalar root accumulates gradients into the
``grad`` field of every reachable leaf that has ``requires_grad`` set.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "ParamStore",
    "no_grad",
    "matmul",
    "softmax",
    "layer_norm",
    "gelu",
    "leaky_relu",
    "conv2d",
    "transpose_conv2d",
    "mse_loss",
    "l1_loss",
    "cross_entropy_logits",
    "multilabel_soft_margin",
    "concat",
    "take",
    "broadcast_to",
    "trunc_normal",
    "fanin_uniform",
    "xavier_uniform",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense array plus optional gradient bookkeeping.

    ``grad`` is populated only on leaves created with ``requires_grad=True``;
    interior nodes receive transient gradients during ``backward`` but do not
    retain them.  Repeated backward passes accumulate into leaf grads, so
    callers must zero grads between optimizer steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        Accumulates into ``grad`` of every reachable requires_grad leaf.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward expects a scalar root, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                node._backward(g, grads)
            elif node.requires_grad:
                node.grad = np.array(g) if node.grad is None else node.grad + g

    # -- operator sugar ------------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _as_pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; bare python scalars adopt the other operand's dtype."""
    a_is, b_is = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_is and not b_is and isinstance(b, (int, float)):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if b_is and not a_is and isinstance(a, (int, float)):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(grads: dict[int, np.ndarray], node: Tensor, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    key = id(node)
    cur = grads.get(key)
    grads[key] = g if cur is None else cur + g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    data = a.data + b.data

    def _bwd(g, grads):
        _accum(grads, a, _reduce_to(g, a.data.shape))
        _accum(grads, b, _reduce_to(g, b.data.shape))

    return _from_op(data, (a, b), _bwd)


def sub(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    data = a.data - b.data

    def _bwd(g, grads):
        _accum(grads, a, _reduce_to(g, a.data.shape))
        _accum(grads, b, _reduce_to(-g, b.data.shape))

    return _from_op(data, (a, b), _bwd)


def mul(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    data = a.data * b.data

    def _bwd(g, grads):
        if a.requires_grad:
            _accum(grads, a, _reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(grads, b, _reduce_to(g * a.data, b.data.shape))

    return _from_op(data, (a, b), _bwd)


def div(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    data = a.data / b.data

    def _bwd(g, grads):
        if a.requires_grad:
            _accum(grads, a, _reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(grads, b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(data, (a, b), _bwd)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    exponent = float(exponent)
    data = a.data**exponent

    def _bwd(g, grads):
        _accum(grads, a, g * exponent * a.data ** (exponent - 1.0))

    return _from_op(data, (a,), _bwd)


# -- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def _bwd(g, grads):
        _accum(grads, a, g.reshape(a.data.shape))

    return _from_op(data, (a,), _bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def _bwd(g, grads):
        _accum(grads, a, g.transpose(inverse))

    return _from_op(data, (a,), _bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _bwd(g, grads):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(grads, part, g[tuple(index)])

    return _from_op(data, parts, _bwd)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (rows kept)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def _bwd(g, grads):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.data)
        moved = np.moveaxis(buf, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _accum(grads, a, buf)

    return _from_op(data, (a,), _bwd)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = np.broadcast_to(a.data, shape)

    def _bwd(g, grads):
        _accum(grads, a, _reduce_to(g, a.data.shape))

    return _from_op(data, (a,), _bwd)


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def _bwd(g, grads):
        if axis is None:
            gx = np.broadcast_to(g, a.data.shape)
        elif keepdims:
            gx = np.broadcast_to(g, a.data.shape)
        else:
            gx = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
        _accum(grads, a, gx)

    return _from_op(data, (a,), _bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / data.size

    def _bwd(g, grads):
        g = g / count
        if axis is None or keepdims:
            gx = np.broadcast_to(g, a.data.shape)
        else:
            gx = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
        _accum(grads, a, gx)

    return _from_op(data, (a,), _bwd)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} x {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def _bwd(g, grads):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(grads, a, _reduce_to(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(grads, b, _reduce_to(gb, b.data.shape))

    return _from_op(data, (a, b), _bwd)


# -- nonlinearities -----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def _bwd(g, grads):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(grads, a, data * (g - inner))

    return _from_op(data, (a,), _bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    feat = a.data.shape[-1]
    if gain.data.shape != (feat,) or bias.data.shape != (feat,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({feat},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def _bwd(g, grads):
        lead = tuple(range(a.data.ndim - 1))
        if gain.requires_grad:
            _accum(grads, gain, (g * xhat).sum(axis=lead))
        if bias.requires_grad:
            _accum(grads, bias, g.sum(axis=lead))
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(grads, a, inv * (dxhat - m1 - xhat * m2))

    return _from_op(data, (a, gain, bias), _bwd)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    data = 0.5 * x * (1.0 + t)

    def _bwd(g, grads):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        _accum(grads, a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return _from_op(data, (a,), _bwd)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = _as_tensor(a)
    positive = a.data >= 0  # gradient at 0 takes the positive branch
    data = np.where(positive, a.data, slope * a.data)

    def _bwd(g, grads):
        _accum(grads, a, np.where(positive, g, slope * g))

    return _from_op(data, (a,), _bwd)


# -- convolutions -------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [O,C,k,k] kernels."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects [B,C,H,W] and [O,C,k,k], got {x.data.shape} and {w.data.shape}"
        )
    B, C, H, W = x.data.shape
    O, Cw, kh, kw = w.data.shape
    if Cw != C or kh != kw:
        raise ShapeError(
            f"conv2d kernel {w.data.shape} incompatible with input {x.data.shape}"
        )
    k = kh
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ShapeError(
            f"conv2d kernel {k} larger than padded input {(H + 2 * pad, W + 2 * pad)}"
        )
    if (H + 2 * pad - k) % stride or (W + 2 * pad - k) % stride:
        raise ShapeError(
            f"conv2d output extent not integral for input {x.data.shape}, "
            f"kernel {k}, stride {stride}, pad {pad}"
        )
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B,C,Ho,Wo,k,k]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * Ho * Wo, C * k * k
    )
    w2d = w.data.reshape(O, C * k * k)
    out2d = cols @ w2d.T
    data = out2d.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (O,):
            raise ShapeError(f"conv2d bias must have shape ({O},), got {b.data.shape}")
        data = data + b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def _bwd(g, grads):
        g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, O)
        if b is not None and b.requires_grad:
            _accum(grads, b, g2d.sum(axis=0))
        if w.requires_grad:
            _accum(grads, w, (g2d.T @ cols).reshape(O, C, k, k))
        if x.requires_grad:
            dcols = (g2d @ w2d).reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
            for di in range(k):
                for dj in range(k):
                    dxp[
                        :, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride
                    ] += dcols[:, :, :, :, di, dj]
            dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
            _accum(grads, x, dx)

    return _from_op(data, parents, _bwd)


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2, k: int = 2) -> Tensor:
    """Adjoint of stride-2 conv2d: [B,C,H,W] x [C,O,2,2] -> [B,O,2H,2W]."""
    if stride != 2 or k != 2:
        raise ValueError(
            f"transpose_conv2d supports only k=stride=2, got k={k} stride={stride}"
        )
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"transpose_conv2d expects [B,C,H,W] and [C,O,2,2], got {x.data.shape} and {w.data.shape}"
        )
    B, C, H, W = x.data.shape
    Cw, O, kh, kw = w.data.shape
    if Cw != C or kh != 2 or kw != 2:
        raise ShapeError(
            f"transpose_conv2d kernel {w.data.shape} incompatible with input {x.data.shape}"
        )

    x2d = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(B * H * W, C)
    w2d = w.data.reshape(C, O * 4)
    tiles = (x2d @ w2d).reshape(B, H, W, O, 2, 2)
    data = np.ascontiguousarray(tiles.transpose(0, 3, 1, 4, 2, 5)).reshape(
        B, O, 2 * H, 2 * W
    )
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (O,):
            raise ShapeError(
                f"transpose_conv2d bias must have shape ({O},), got {b.data.shape}"
            )
        data = data + b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def _bwd(g, grads):
        gt = np.ascontiguousarray(
            g.reshape(B, O, H, 2, W, 2).transpose(0, 2, 4, 1, 3, 5)
        ).reshape(B * H * W, O * 4)
        if b is not None and b.requires_grad:
            _accum(grads, b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            _accum(grads, w, (x2d.T @ gt).reshape(C, O, 2, 2))
        if x.requires_grad:
            dx = (gt @ w2d.T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            _accum(grads, x, dx)

    return _from_op(data, parents, _bwd)


# -- losses --------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size
    data = np.asarray((diff * diff).sum() / n)

    def _bwd(g, grads):
        scale = 2.0 * g / n
        if pred.requires_grad:
            _accum(grads, pred, scale * diff)
        if target.requires_grad:
            _accum(grads, target, -scale * diff)

    return _from_op(data, (pred, target), _bwd)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size
    data = np.asarray(np.abs(diff).sum() / n)

    def _bwd(g, grads):
        sign = np.sign(diff)  # sign(0) = 0
        if pred.requires_grad:
            _accum(grads, pred, g * sign / n)
        if target.requires_grad:
            _accum(grads, target, -g * sign / n)

    return _from_op(data, (pred, target), _bwd)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of [B,K] logits against int class labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    B = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    data = np.asarray(-logp[np.arange(B), labels].mean())

    def _bwd(g, grads):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        _accum(grads, logits, g * p / B)

    return _from_op(data, (logits,), _bwd)


def multilabel_soft_margin(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary soft-margin loss of [B,K] logits against {0,1} targets."""
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=logits.data.dtype)
    if y.shape != logits.data.shape:
        raise ShapeError(
            f"multilabel_soft_margin shapes differ: {logits.data.shape} vs {y.shape}"
        )
    x = logits.data
    # softplus(x) = log(1 + e^x), stable both directions
    loss = y * np.logaddexp(0.0, -x) + (1.0 - y) * np.logaddexp(0.0, x)
    n = x.size
    data = np.asarray(loss.sum() / n)

    def _bwd(g, grads):
        sig = 1.0 / (1.0 + np.exp(-x))
        _accum(grads, logits, g * (sig - y) / n)

    return _from_op(data, (logits,), _bwd)


# -- parameters ----------------------------------------------------------------


class ParamStore:
    """Named, ordered collection of trainable tensors.

    Iteration follows insertion order, which is fixed by the model
    construction sequence, so checkpoints and optimizer state line up
    across runs.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Replace parameter values in place; names and shapes must match."""
        mismatched = [n for n in arrays if n not in self._params] + [
            n for n in self._params if n not in arrays
        ]
        if mismatched:
            raise KeyError(f"parameter names do not match: {sorted(mismatched)}")
        for name, t in self._params.items():
            arr = arrays[name]
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: stored shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self._params.items():
            dup.add(name, t.data.copy())
        return dup


# -- initializers --------------------------------------------------------------


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) with resampling outside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def fanin_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
