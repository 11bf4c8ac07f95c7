"""Reverse-mode automatic differentiation over numpy buffers.

A :class:`Tensor` wraps a row-major numpy array and, when an operation
involves at least one tensor that requires gradients, records a backward
closure on the output.  Calling :func:`backward` on a scalar loss replays
the recorded tape in reverse topological order, accumulating gradients
additively across fan-out.  The tape is consumed by the call.

All reductions run in a fixed sequential order, so two runs on identical
inputs produce bit-identical values and gradients.  Any NaN or Inf
produced by a forward or backward computation on finite inputs raises
:class:`NumericsError` instead of propagating.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "NumericsError",
    "GraphError",
    "tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "relu",
    "clamp",
    "reshape",
    "transpose",
    "concatenate",
    "tsum",
    "tmean",
    "variance",
    "l2norm",
    "matmul",
    "linear",
    "conv2d",
    "reflect_pad2d",
    "max_pool2d",
    "upsample_nearest2",
    "softmax_cross_entropy",
]


class NumericsError(ArithmeticError):
    """A forward or backward computation produced NaN or Inf."""


class GraphError(ValueError):
    """The autodiff graph was used incorrectly (e.g. non-scalar backward)."""


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None:
        if data.dtype in (np.float64, np.float32):
            return data
        return data.astype(np.float64)
    return np.asarray(data, dtype=dtype or np.float64)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # One-pass screen: any NaN/Inf drives the sum non-finite.  (A finite
    # sum of individually non-finite values is impossible; overflow of
    # the sum itself only ever turns finite values into +/-Inf, which is
    # a true positive for the magnitudes this engine works with.)
    with np.errstate(over="ignore", invalid="ignore"):
        total = float(arr.sum())
    if not np.isfinite(total):
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values produced by '{op}'")
        raise NumericsError(f"overflow while checking '{op}'")


class Tensor:
    """N-dimensional array node in the autodiff graph.

    Tensors are immutable after forward construction; optimizers mutate
    leaf ``data`` buffers only between tapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axes=None, keepdims=False):
        return tsum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return tmean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def sqrt(self):
        return sqrt(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn, check: bool = True) -> Tensor:
    """Wrap a forward result, attaching the tape record when needed.

    ``check=False`` is reserved for ops that cannot produce non-finite
    values from finite inputs (selections, reorderings, clamps).
    """
    if check:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(parent: Tensor, contribution: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    _check_finite(contribution, "backward")
    if parent.grad is None:
        parent.grad = contribution.copy() if contribution.base is not None else contribution
    else:
        parent.grad += contribution


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires-grad leaf.

    ``loss`` must be a scalar produced from a live tape; the tape is
    consumed (the graph is released) by this call.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require gradients; nothing to differentiate")

    # Iterative post-order DFS: reverse topological order without recursion.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        _run_tape(order)


def _run_tape(order: list) -> None:
    for node in reversed(order):
        if node._backward is None:
            continue  # leaf: keeps its accumulated gradient
        if node.grad is None:
            continue
        _check_finite(node.grad, f"backward[{node._op}]")
        node._backward(node.grad)
        # Tape consumed: release the closure and the intermediate gradient.
        node._backward = None
        node._parents = ()
        node.grad = None


# -- elementwise ops -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        handed_over = False
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            handed_over = ga is g
            _accumulate(a, ga)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            # The incoming buffer may be owned by at most one parent.
            _accumulate(b, gb.copy() if (gb is g and handed_over) else gb)

    return _make(data, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, "div", (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _make(-a.data, "neg", (a,), bwd, check=False)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * data)

    return _make(data, "exp", (a,), bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _make(data, "log", (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        data = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * (0.5 / data))

    return _make(data, "sqrt", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, "relu", (a,), bwd, check=False)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes through strictly inside the range."""
    data = np.clip(a.data, lo, hi)

    def bwd(g):
        _accumulate(a, g * ((a.data > lo) & (a.data < hi)))

    return _make(data, "clamp", (a,), bwd, check=False)


# -- shape ops -------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.data.shape
    data = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(old))

    return _make(data, "reshape", (a,), bwd, check=False)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bwd(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, "transpose", (a,), bwd, check=False)


def concatenate(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            _accumulate(p, g[tuple(idx)])

    return _make(data, "concatenate", parts, bwd, check=False)


# -- reductions ------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def tsum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(data, "sum", (a,), bwd)


def tmean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes]))
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g / count, a.data.shape))

    return _make(data, "mean", (a,), bwd)


def variance(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Population variance over ``axes`` (divisor = element count)."""
    centered = sub(a, tmean(a, axes, keepdims=True))
    return tmean(mul(centered, centered), axes, keepdims)


def l2norm(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axes``.

    At an exactly zero vector the subgradient 0 is used instead of the
    undefined derivative, mirroring relu's convention at its kink.
    """
    axes = _norm_axes(axes, a.data.ndim)
    sq = (a.data * a.data).sum(axis=axes, keepdims=True)
    norm_keep = np.sqrt(sq)
    data = norm_keep if keepdims else np.squeeze(norm_keep, axis=axes)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        safe = np.where(norm_keep > 0.0, norm_keep, 1.0)
        _accumulate(a, g * a.data / safe)

    return _make(data, "l2norm", (a,), bwd)


# -- dense / network ops ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(data, "matmul", (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b for x of shape (N, D), w of shape (D, K), b of shape (K,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def _conv_geometry(h: int, w: int, k: int, stride: int, padding: int) -> tuple:
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise GraphError(f"convolution output would be empty for input {h}x{w}, k={k}")
    return ho, wo


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N, C*k*k, Ho*Wo) patch matrix.

    Built as k*k plain strided copies, which numpy executes far faster
    than one transpose-copy of the 6-D sliding-window view.
    """
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _pad_zero2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing axes; avoids np.pad's generic machinery."""
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.empty((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, :pad, :] = 0.0
    out[:, :, h + pad :, :] = 0.0
    out[:, :, pad : h + pad, :pad] = 0.0
    out[:, :, pad : h + pad, w + pad :] = 0.0
    out[:, :, pad : h + pad, pad : w + pad] = x
    return out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of (N,C_in,H,W) with (C_out,C_in,k,k), zero padding.

    For reflection padding compose with :func:`reflect_pad2d` and pass
    ``padding=0`` here.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise GraphError("conv2d expects x (N,C,H,W) and weight (C_out,C_in,k,k)")
    n, c_in, h, w = x.data.shape
    c_out, c_in_w, k, k2 = weight.data.shape
    if k != k2 or k % 2 != 1:
        raise GraphError(f"conv2d kernel must be square with odd extent, got {k}x{k2}")
    if c_in != c_in_w:
        raise GraphError(f"conv2d channel mismatch: input {c_in} vs weight {c_in_w}")
    if bias is not None and bias.data.shape != (c_out,):
        raise GraphError(f"conv2d bias must have shape ({c_out},)")
    ho, wo = _conv_geometry(h, w, k, stride, padding)

    xp = _pad_zero2d(x.data, padding)
    cols = _im2col(xp, k, stride)  # (N, CKK, P)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w2, cols)  # (N, C_out, P)
    if bias is not None:
        out += bias.data[:, None]
    data = out.reshape(n, c_out, ho, wo)

    # Patch matrix is only retained when weight gradients are needed.
    cols_saved = cols if weight.requires_grad else None

    def bwd(g):
        g_r = g.reshape(n, c_out, ho * wo)  # (N, C_out, P)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g_r.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw2 = np.tensordot(g_r, cols_saved, axes=([0, 2], [0, 2]))  # (C_out, CKK)
            _accumulate(weight, dw2.reshape(weight.data.shape))
        if x.requires_grad:
            hp, wp = xp.shape[2], xp.shape[3]
            # Two equivalent input-gradient routes; pick whichever moves
            # less data.  Transposed conv inflates by c_out*k*k, the
            # column scatter by c_in*k*k.
            if stride == 1 and c_out * hp * wp < c_in * ho * wo:
                gp = _pad_zero2d(g, k - 1)
                gcols = _im2col(gp, k, 1)  # (N, C_out*k*k, Hp*Wp)
                wt = np.ascontiguousarray(
                    weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                ).reshape(c_in, c_out * k * k)
                dxp = np.matmul(wt, gcols).reshape(n, c_in, hp, wp)
            else:
                dcols = np.matmul(w2.T, g_r)  # (N, CKK, P)
                d6 = dcols.reshape(n, c_in, k, k, ho, wo)
                dxp = np.zeros((n, c_in, hp, wp), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d6[
                            :, :, i, j
                        ]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accumulate(x, dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, "conv2d", parents, bwd)


def _reflect_indices(extent: int, pad: int) -> np.ndarray:
    if pad >= extent:
        raise GraphError(f"reflection pad {pad} too large for extent {extent}")
    idx = np.arange(-pad, extent + pad)
    return np.abs(idx) * (idx < extent) + (2 * extent - 2 - idx) * (idx >= extent)


def _fold_reflect(g: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Adjoint of reflect-padding along one axis: interior plus mirrored borders."""
    length = g.shape[axis] - 2 * pad

    def sl(start, stop, step=1):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(start, stop, step)
        return tuple(idx)

    core = g[sl(pad, pad + length)].copy()
    if pad:
        # Padded rows 0..pad-1 mirror sources pad..1; the trailing rows
        # mirror sources length-2..length-1-pad.
        core[sl(1, pad + 1)] += np.flip(g[sl(0, pad)], axis=axis)
        core[sl(length - 1 - pad, length - 1)] += np.flip(g[sl(pad + length, pad + length + pad)], axis=axis)
    return core


def reflect_pad2d(x: Tensor, pad: int) -> Tensor:
    """Mirror-pad the two trailing spatial axes of (N,C,H,W) by ``pad``."""
    n, c, h, w = x.data.shape
    _reflect_indices(h, pad), _reflect_indices(w, pad)  # validates pad < extent
    data = np.empty((n, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
    data[:, :, pad : h + pad, pad : w + pad] = x.data
    for j in range(pad):
        data[:, :, pad - 1 - j, pad : w + pad] = x.data[:, :, 1 + j]
        data[:, :, h + pad + j, pad : w + pad] = x.data[:, :, h - 2 - j]
    for j in range(pad):  # columns mirror within the row-padded buffer
        data[:, :, :, pad - 1 - j] = data[:, :, :, pad + 1 + j]
        data[:, :, :, w + pad + j] = data[:, :, :, w + pad - 2 - j]

    def bwd(g):
        _accumulate(x, _fold_reflect(_fold_reflect(g, pad, 3), pad, 2))

    return _make(data, "reflect_pad2d", (x,), bwd, check=False)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first element
    in row-major window order."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise GraphError(f"max_pool2d expects even spatial extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    x4 = x.data.reshape(n, c, h2, 2, w2, 2)
    data = np.maximum(
        np.maximum(x4[:, :, :, 0, :, 0], x4[:, :, :, 0, :, 1]),
        np.maximum(x4[:, :, :, 1, :, 0], x4[:, :, :, 1, :, 1]),
    )

    def bwd(g):
        dx = np.zeros((n, c, h2, 2, w2, 2), dtype=g.dtype)
        taken = np.zeros(data.shape, dtype=bool)
        for i in (0, 1):
            for j in (0, 1):
                hit = (x4[:, :, :, i, :, j] == data) & ~taken
                dx[:, :, :, i, :, j] = g * hit
                taken |= hit
        _accumulate(x, dx.reshape(n, c, h, w))

    return _make(data, "max_pool2d", (x,), bwd, check=False)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling of (N,C,H,W)."""
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, w = x.data.shape

    def bwd(g):
        _accumulate(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(data, "upsample_nearest2", (x,), bwd, check=False)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample cross-entropy of integer ``labels`` under ``logits`` (N,K).

    Returns a length-N tensor; reduce with ``.mean()`` or ``.sum()``.
    """
    if logits.data.ndim != 2:
        raise GraphError(f"softmax_cross_entropy expects (N,K) logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise GraphError(f"labels must have shape ({n},), got {labels.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    data = lse - logits.data[np.arange(n), labels]

    def bwd(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), labels] -= 1.0
        _accumulate(logits, soft * g[:, None])

    return _make(data, "softmax_cross_entropy", (logits,), bwd)
