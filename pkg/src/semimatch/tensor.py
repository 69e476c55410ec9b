"""Dense tensor kernels with reverse-mode differentiation on numpy storage.

Everything the matching pipeline computes is composed from the ops in this
module: convolutions, pooling, softmax, attention, bilinear upsampling and
the usual elementwise/movement ops. Values are float32 by default; build a
graph from float64 leaves to run the same code in checking precision.

Gradients flow through an implicit tape: each op result keeps a context
pointing at its parents, and ``Tensor.backward()`` walks the graph once in
reverse topological order.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from functools import lru_cache

import numpy as np

from .instrument import counters

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_finite_checks = False


class NumericError(ArithmeticError):
    """An operation produced NaN or Inf while finite checks were enabled."""


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection after every op. Returns the previous setting."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = enabled
    return previous


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._ctx: Function | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from a scalar output to every reachable leaf."""
        if self._ctx is None:
            raise ValueError("backward() on a tensor that is not attached to a graph")
        if self.data.shape != ():
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        order = _toposort(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in reversed(order):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad and node._ctx is None:
                node.grad = grad if node.grad is None else node.grad + grad
            if node._ctx is None:
                continue
            for parent, pgrad in zip(node._ctx.parents, node._ctx.backward(grad)):
                if pgrad is None or not (parent.requires_grad or parent._ctx is not None):
                    continue
                if pgrad.shape != parent.data.shape:
                    raise ValueError(
                        f"gradient shape {pgrad.shape} != value shape {parent.data.shape} "
                        f"in {type(node._ctx).__name__}"
                    )
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pgrad
                else:
                    pending[key] = pgrad

    # -- operators -------------------------------------------------------
    def __neg__(self):
        return Neg.apply(self)

    def __add__(self, other):
        return Add.apply(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return Sub.apply(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return Mul.apply(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Div.apply(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return Div.apply(_wrap(other, self.dtype), self)

    def __pow__(self, exponent):
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return Slice.apply(self, key=key)

    @property
    def T(self):
        if self.ndim != 2:
            raise ValueError("T is defined for 2-D tensors; use transpose(perm)")
        return Transpose.apply(self, perm=(1, 0))

    # -- method sugar ------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *perm):
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        return Transpose.apply(self, perm=perm)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)

    def relu(self):
        return ReLU.apply(self)

    def elu(self):
        return ELU.apply(self)

    def clamp_min(self, bound: float):
        return ClampMin.apply(self, bound=float(bound))


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emit = stack.pop()
        if emit:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Function:
    """One recorded op: forward computes, backward maps output grad to parents."""

    __slots__ = ("parents", "saved")

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.saved: tuple = ()

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        parents = tuple(a for a in args if isinstance(a, Tensor))
        ctx = cls(*parents)
        out_data = ctx.forward(*(a.data if isinstance(a, Tensor) else a for a in args), **kwargs)
        if _finite_checks and not np.all(np.isfinite(out_data)):
            raise NumericError(f"{cls.__name__} produced a non-finite value")
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._ctx = ctx
        else:
            out.requires_grad = False
            out._ctx = None
        return out

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        self.saved = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        self.saved = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Div(Function):
    def forward(self, a, b):
        self.saved = (a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return (
            _unbroadcast(grad / b, a.shape),
            _unbroadcast(-grad * a / (b * b), b.shape),
        )


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, exponent):
        self.saved = (a, exponent)
        return a**exponent

    def backward(self, grad):
        a, p = self.saved
        return (grad * p * a ** (p - 1),)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        return (grad * self.saved[0],)


class Log(Function):
    def forward(self, a):
        self.saved = (a,)
        return np.log(a)

    def backward(self, grad):
        return (grad / self.saved[0],)


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.saved = (out,)
        return out

    def backward(self, grad):
        return (grad / (2.0 * self.saved[0]),)


class ReLU(Function):
    def forward(self, a):
        self.saved = (a > 0,)
        return np.maximum(a, 0)

    def backward(self, grad):
        return (grad * self.saved[0],)


class ELU(Function):
    # alpha = 1: elu(x) = x for x > 0, exp(x) - 1 otherwise
    def forward(self, a):
        positive = a > 0
        out = np.where(positive, a, np.exp(np.minimum(a, 0.0)) - 1.0)
        self.saved = (positive, out)
        return out.astype(a.dtype, copy=False)

    def backward(self, grad):
        positive, out = self.saved
        return (grad * np.where(positive, 1.0, out + 1.0).astype(grad.dtype, copy=False),)


class ClampMin(Function):
    def forward(self, a, bound):
        self.saved = (a >= bound,)
        return np.maximum(a, bound)

    def backward(self, grad):
        return (grad * self.saved[0],)


# ---------------------------------------------------------------------------
# reductions and movement
# ---------------------------------------------------------------------------


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.saved = (a.shape, axis, keepdims)
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is None:
            return (np.broadcast_to(grad, shape).astype(grad.dtype, copy=False).copy(),)
        if not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(a % len(shape) for a in axes)
            expand = list(grad.shape)
            for a in sorted(axes):
                expand.insert(a, 1)
            grad = grad.reshape(expand)
        return (np.broadcast_to(grad, shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved[0]),)


class Transpose(Function):
    def forward(self, a, perm):
        self.saved = (tuple(np.argsort(perm)),)
        return np.ascontiguousarray(a.transpose(perm))

    def backward(self, grad):
        return (np.ascontiguousarray(grad.transpose(self.saved[0])),)


class Concat(Function):
    def forward(self, *parts, axis):
        self.saved = (axis, [p.shape[axis] for p in parts])
        return np.concatenate(parts, axis=axis)

    def backward(self, grad):
        axis, sizes = self.saved
        out = []
        start = 0
        for n in sizes:
            index = [slice(None)] * grad.ndim
            index[axis] = slice(start, start + n)
            out.append(np.ascontiguousarray(grad[tuple(index)]))
            start += n
        return tuple(out)


class Slice(Function):
    """Basic indexing only (ints and slices); advanced indexing uses gather_nd."""

    def forward(self, a, key):
        self.saved = (a.shape, key)
        return np.ascontiguousarray(a[key])

    def backward(self, grad):
        shape, key = self.saved
        out = np.zeros(shape, dtype=grad.dtype)
        out[key] += grad
        return (out,)


class GatherND(Function):
    def forward(self, a, index):
        self.saved = (a.shape, index)
        return np.ascontiguousarray(a[index])

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape, dtype=grad.dtype)
        np.add.at(out, index, grad)
        return (out,)


class MatMul(Function):
    """(…, n, k) @ (…, k, m) with identical leading dims on both operands."""

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.saved = (a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        return (
            np.matmul(grad, b.swapaxes(-1, -2)),
            np.matmul(a.swapaxes(-1, -2), grad),
        )


class Softmax(Function):
    def forward(self, a, axis):
        shifted = a - a.max(axis=axis, keepdims=True)
        np.exp(shifted, out=shifted)
        shifted /= shifted.sum(axis=axis, keepdims=True)
        self.saved = (shifted, axis)
        counters.add("softmax")
        return shifted

    def backward(self, grad):
        y, axis = self.saved
        inner = (grad * y).sum(axis=axis, keepdims=True)
        return (y * (grad - inner),)


# ---------------------------------------------------------------------------
# spatial ops on (C, H, W) maps
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _window_index(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Flat indices of every sliding-window element in the zero-padded plane.

    Shape (out_h * out_w, kh * kw), row-major over output cells and window
    elements; shared by conv, depthwise conv and max-pool kernels.
    """
    hp, wp = h + 2 * pad, w + 2 * pad
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"window {kh}x{kw} larger than padded input {hp}x{wp}")
    r0 = np.repeat(np.arange(out_h) * stride, out_w)
    c0 = np.tile(np.arange(out_w) * stride, out_h)
    dr = np.repeat(np.arange(kh), kw)
    dc = np.tile(np.arange(kw), kh)
    rows = r0[:, None] + dr[None, :]
    cols = c0[:, None] + dc[None, :]
    return rows * wp + cols


def _pad_plane(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


class Conv2d(Function):
    def forward(self, x, kernel, bias, stride, pad):
        cin, h, w = x.shape
        cout, kin, kh, kw = kernel.shape
        if kin != cin:
            raise ValueError(f"conv2d: input has {cin} channels, kernel expects {kin}")
        idx = _window_index(h, w, kh, kw, stride, pad)
        xp = _pad_plane(x, pad).reshape(cin, -1)
        # cols: (out_cells, cin * kh * kw)
        cols = xp[:, idx].transpose(1, 0, 2).reshape(idx.shape[0], cin * kh * kw)
        out = cols @ kernel.reshape(cout, -1).T
        if bias is not None:
            out += bias
        oh, ow = _out_hw(h, w, kh, kw, stride, pad)
        self.saved = (cols, kernel, x.shape, stride, pad, bias is not None)
        counters.add("conv2d")
        return np.ascontiguousarray(out.T.reshape(cout, oh, ow))

    def backward(self, grad):
        cols, kernel, x_shape, stride, pad, has_bias = self.saved
        cin, h, w = x_shape
        cout, _, kh, kw = kernel.shape
        gmat = grad.reshape(cout, -1).T  # (out_cells, cout)
        dkernel = (gmat.T @ cols).reshape(kernel.shape)
        dbias = grad.sum(axis=(1, 2)) if has_bias else None
        dcols = gmat @ kernel.reshape(cout, -1)  # (out_cells, cin*kh*kw)
        idx = _window_index(h, w, kh, kw, stride, pad)
        hp, wp = h + 2 * pad, w + 2 * pad
        dcols = dcols.reshape(-1, cin, kh * kw).transpose(1, 0, 2)
        flat = np.broadcast_to(idx, (cin, *idx.shape)) + (np.arange(cin) * hp * wp)[:, None, None]
        dx = np.bincount(flat.ravel(), weights=dcols.ravel(), minlength=cin * hp * wp)
        dx = dx.reshape(cin, hp, wp).astype(grad.dtype, copy=False)
        if pad:
            dx = dx[:, pad:-pad, pad:-pad]
        grads = (np.ascontiguousarray(dx), dkernel)
        return grads + (dbias,) if has_bias else grads


class DepthwiseConv2d(Function):
    def forward(self, x, kernel, stride, pad):
        cin, h, w = x.shape
        kc, kh, kw = kernel.shape
        if kc != cin:
            raise ValueError(f"depthwise_conv2d: input has {cin} channels, kernel has {kc}")
        idx = _window_index(h, w, kh, kw, stride, pad)
        xp = _pad_plane(x, pad).reshape(cin, -1)
        cols = xp[:, idx]  # (cin, out_cells, kh*kw)
        out = np.einsum("cok,ck->co", cols, kernel.reshape(cin, -1), optimize=False)
        oh, ow = _out_hw(h, w, kh, kw, stride, pad)
        self.saved = (cols, kernel, x.shape, stride, pad)
        counters.add("conv2d")
        return np.ascontiguousarray(out.reshape(cin, oh, ow))

    def backward(self, grad):
        cols, kernel, x_shape, stride, pad = self.saved
        cin, h, w = x_shape
        kc, kh, kw = kernel.shape
        g2 = grad.reshape(cin, -1)
        dkernel = np.einsum("co,cok->ck", g2, cols, optimize=False).reshape(kernel.shape)
        dcols = g2[:, :, None] * kernel.reshape(cin, 1, -1)
        idx = _window_index(h, w, kh, kw, stride, pad)
        hp, wp = h + 2 * pad, w + 2 * pad
        flat = np.broadcast_to(idx, (cin, *idx.shape)) + (np.arange(cin) * hp * wp)[:, None, None]
        dx = np.bincount(flat.ravel(), weights=dcols.ravel(), minlength=cin * hp * wp)
        dx = dx.reshape(cin, hp, wp).astype(grad.dtype, copy=False)
        if pad:
            dx = dx[:, pad:-pad, pad:-pad]
        return np.ascontiguousarray(dx), dkernel


class MaxPool2d(Function):
    def forward(self, x, k, stride):
        cin, h, w = x.shape
        if k > h or k > w:
            raise ValueError(f"maxpool window {k} larger than input {h}x{w}")
        idx = _window_index(h, w, k, k, stride, 0)
        cols = x.reshape(cin, -1)[:, idx]  # (cin, out_cells, k*k)
        arg = cols.argmax(axis=2)  # first max in row-major window order
        out = np.take_along_axis(cols, arg[:, :, None], axis=2)[:, :, 0]
        oh, ow = _out_hw(h, w, k, k, stride, 0)
        self.saved = (idx, arg, x.shape)
        return np.ascontiguousarray(out.reshape(cin, oh, ow))

    def backward(self, grad):
        idx, arg, x_shape = self.saved
        cin, h, w = x_shape
        winners = np.take_along_axis(np.broadcast_to(idx, (cin, *idx.shape)), arg[:, :, None], axis=2)[:, :, 0]
        flat = winners + (np.arange(cin) * h * w)[:, None]
        dx = np.bincount(flat.ravel(), weights=grad.reshape(cin, -1).ravel(), minlength=cin * h * w)
        return (dx.reshape(cin, h, w).astype(grad.dtype, copy=False),)


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Dense 1-D bilinear interpolation matrix, align-corners=false convention."""
    n_out = n_in * factor
    out = np.zeros((n_out, n_in))
    coords = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    t = coords - lo
    out[np.arange(n_out), lo] += 1.0 - t
    out[np.arange(n_out), hi] += t
    return out


class BilinearUpsample2d(Function):
    def forward(self, x, factor):
        cin, h, w = x.shape
        ry = _interp_matrix(h, factor).astype(x.dtype)
        rx = _interp_matrix(w, factor).astype(x.dtype)
        self.saved = (ry, rx)
        # separable: rows then columns, as plain matmuls
        return np.matmul(ry, np.matmul(x, rx.T))

    def backward(self, grad):
        ry, rx = self.saved
        return (np.matmul(ry.T, np.matmul(grad, rx)),)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def concat(parts, axis: int = 0) -> Tensor:
    return Concat.apply(*parts, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Overflow-safe softmax along ``axis`` (max-subtracted)."""
    return Softmax.apply(x, axis=axis)


def gather_nd(x: Tensor, index: tuple) -> Tensor:
    """Advanced indexing with integer arrays; backward scatter-adds."""
    return GatherND.apply(x, index=index)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution over a (C, H, W) map with zero padding.

    Kernel is (out_c, in_c, kh, kw) with odd kh, kw; output spatial dims are
    floor((H + 2·pad − kh) / stride) + 1.
    """
    kh, kw = kernel.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d expects odd kernel sizes")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d expects stride >= 1 and pad >= 0")
    if bias is None:
        return Conv2d.apply(x, kernel, None, stride=stride, pad=pad)
    return Conv2d.apply(x, kernel, bias, stride=stride, pad=pad)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel convolution: output channel c depends only on input channel c."""
    return DepthwiseConv2d.apply(x, kernel, stride=stride, pad=pad)


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """k×k max pooling; gradient routes to the first max of each window."""
    if k < 1:
        raise ValueError("maxpool2d expects k >= 1")
    return MaxPool2d.apply(x, k=k, stride=stride if stride is not None else k)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling, align-corners=false sample centers."""
    if factor < 1:
        raise ValueError("bilinear_upsample expects factor >= 1")
    if factor == 1:
        return x
    return BilinearUpsample2d.apply(x, factor=factor)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T (+ bias) over the last axis; weight is (out, in)."""
    out = matmul(x, weight.T) if x.ndim == 2 else _linear_nd(x, weight)
    if bias is not None:
        out = out + bias
    return out


def _linear_nd(x: Tensor, weight: Tensor) -> Tensor:
    lead = x.shape[:-1]
    flat = x.reshape((-1, x.shape[-1]))
    return matmul(flat, weight.T).reshape((*lead, weight.shape[0]))


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Parameter-free layer normalization over the last axis."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt()


def vanilla_attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None) -> Tensor:
    """softmax(q·kᵀ·scale)·v; scale defaults to 1/√d.

    The plain product form saturates for large feature dims, so the scaled
    variant is the default; pass scale=1.0 for the unscaled product.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention dim mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape} vs {v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, _swap_last(k)) * scale
    counters.add("attn_score_entries", int(np.prod(scores.shape[-2:])))
    return matmul(softmax(scores, axis=-1), v)


def linear_attention(q: Tensor, k: Tensor, v: Tensor, normalized: bool = True) -> Tensor:
    """Kernelized attention with φ(x) = elu(x) + 1.

    The default computes φ(q)·(φ(k)ᵀv) with per-query normalization by
    φ(q)·Σφ(k). ``normalized=False`` computes the unnormalized variant
    φ(q)·(φ(k)ᵀφ(v)) for A/B comparison; it is not scale-invariant.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention dim mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape} vs {v.shape}")
    fq = q.elu() + 1.0
    fk = k.elu() + 1.0
    if not normalized:
        return matmul(fq, matmul(_swap_last(fk), v.elu() + 1.0))
    numerator = matmul(fq, matmul(_swap_last(fk), v))
    denominator = matmul(fq, fk.sum(axis=-2, keepdims=True).reshape((*fk.shape[:-2], fk.shape[-1], 1)))
    return numerator / denominator


def _swap_last(x: Tensor) -> Tensor:
    perm = list(range(x.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return x.transpose(perm)
