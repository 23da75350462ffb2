"""Registered primitives and their functional wrappers.

Each primitive is a forward function over numpy arrays plus its VJP. The
functional wrappers accept tensors (recorded on the active tape) or plain
arrays (evaluated directly, returning arrays).
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from ..config.constants import ZERO_NORM_TOL
from ..core.exceptions import ShapeMismatchError, ZeroNormError
from .tensor import Tensor, apply, get_primitive, register_primitive

Axis = Optional[Union[int, Tuple[int, ...]]]


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    axes = _normalize_axes(axis, len(shape))
    if not keepdims:
        g = np.reshape(g, [1 if i in axes else s for i, s in enumerate(shape)])
    return np.broadcast_to(g, shape)


def zero_norm_tolerance(dtype) -> float:
    return ZERO_NORM_TOL["float64"] if np.dtype(dtype) == np.float64 else ZERO_NORM_TOL["float32"]


# --- elementwise arithmetic -------------------------------------------------

register_primitive("add", lambda a, b: a + b, lambda g, out, a, b: (g, g))
register_primitive("subtract", lambda a, b: a - b, lambda g, out, a, b: (g, -g))
register_primitive("multiply", lambda a, b: a * b, lambda g, out, a, b: (g * b, g * a))
register_primitive("divide", lambda a, b: a / b, lambda g, out, a, b: (g / b, -g * out / b))
register_primitive("negative", lambda a: -a, lambda g, out, a: (-g,))
register_primitive("exp", np.exp, lambda g, out, a: (g * out,))
register_primitive("log", np.log, lambda g, out, a: (g / a,))

# subgradient 0 at exactly 0
register_primitive(
    "relu",
    lambda a: np.maximum(a, 0),
    lambda g, out, a: (g * (a > 0),),
    kink=lambda a: a > 0,
)
register_primitive(
    "clip_min",
    lambda a, floor: np.maximum(a, np.asarray(floor, dtype=a.dtype)),
    lambda g, out, a, floor: (g * (a > floor),),
    kink=lambda a, floor: a > floor,
)


# --- linear algebra ----------------------------------------------------------

def _matmul_vjp(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _matmul_forward(a, b):
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeMismatchError("matmul supports vectors and matrices only")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return a @ b


register_primitive("matmul", _matmul_forward, _matmul_vjp)


# --- reductions and layout ---------------------------------------------------

register_primitive(
    "sum",
    lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims),
    lambda g, out, a, axis=None, keepdims=False: (_expand_reduced(g, a.shape, axis, keepdims),),
)


def _mean_vjp(g, out, a, axis=None, keepdims=False):
    count = int(np.prod([a.shape[i] for i in _normalize_axes(axis, a.ndim)]))
    return (_expand_reduced(g, a.shape, axis, keepdims) / count,)


register_primitive(
    "mean",
    lambda a, axis=None, keepdims=False: np.mean(a, axis=axis, keepdims=keepdims),
    _mean_vjp,
)
register_primitive(
    "reshape",
    lambda a, shape: np.reshape(a, shape),
    lambda g, out, a, shape: (np.reshape(g, a.shape),),
)


def _concat_vjp(g, out, *arrays, axis=0):
    cuts = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


register_primitive(
    "concat",
    lambda *arrays, axis=0: np.concatenate(arrays, axis=axis),
    _concat_vjp,
)


# --- normalization and softmax family ---------------------------------------

def _l2_normalize_forward(a, axis=-1):
    norm = np.sqrt(np.sum(a * a, axis=axis, keepdims=True))
    if np.any(norm <= zero_norm_tolerance(a.dtype)):
        raise ZeroNormError(f"cannot normalize a vector with norm <= {zero_norm_tolerance(a.dtype)}")
    return a / norm


def _l2_normalize_vjp(g, out, a, axis=-1):
    norm = np.sqrt(np.sum(a * a, axis=axis, keepdims=True))
    return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / norm,)


register_primitive("l2_normalize", _l2_normalize_forward, _l2_normalize_vjp)


def _softmax_forward(a, axis=-1):
    return special.softmax(a, axis=axis).astype(a.dtype, copy=False)


register_primitive(
    "stable_softmax",
    _softmax_forward,
    lambda g, out, a, axis=-1: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
)


def _logsumexp_forward(a, axis=-1, keepdims=False):
    return np.asarray(special.logsumexp(a, axis=axis, keepdims=keepdims), dtype=a.dtype)


def _logsumexp_vjp(g, out, a, axis=-1, keepdims=False):
    if not keepdims:
        out = np.expand_dims(out, axis)
        g = np.expand_dims(g, axis)
    return (g * np.exp(a - out),)


register_primitive("logsumexp", _logsumexp_forward, _logsumexp_vjp)


# --- convolutional trunk -----------------------------------------------------

def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv2d_forward(x, w, padding=1):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"conv2d expects (B,C,H,W) x (O,C,kh,kw), got {x.shape}, {w.shape}")
    kh, kw = w.shape[2:]
    cols = sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv2d_vjp(g, out, x, w, padding=1):
    kh, kw = w.shape[2:]
    xp = _pad(x, padding)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
    out_h, out_w = g.shape[2:]
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i:i + out_h, j:j + out_w] += contrib.transpose(0, 3, 1, 2)
    height, width = x.shape[2:]
    return gxp[:, :, padding:padding + height, padding:padding + width], gw


register_primitive("conv2d", _conv2d_forward, _conv2d_vjp)


def _pool_windows(x, size):
    b, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeMismatchError(f"max_pool2d window {size} does not tile {h}x{w}")
    win = x.reshape(b, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(b, c, h // size, w // size, size * size)


def _max_pool2d_vjp(g, out, x, size=2):
    b, c, h, w = x.shape
    win = _pool_windows(x, size)
    mask = np.zeros_like(win)
    np.put_along_axis(mask, win.argmax(axis=-1)[..., None], 1, axis=-1)
    gwin = mask * g[..., None]
    gx = gwin.reshape(b, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
    return (gx.reshape(b, c, h, w),)


register_primitive(
    "max_pool2d",
    lambda x, size=2: _pool_windows(x, size).max(axis=-1),
    _max_pool2d_vjp,
    kink=lambda x, size=2: _pool_windows(x, size).argmax(axis=-1),
)


# --- functional API ----------------------------------------------------------

def _dispatch(name: str, x, *rest, **attrs):
    if isinstance(x, Tensor) or any(isinstance(r, Tensor) for r in rest):
        lifted = [r if isinstance(r, Tensor) else Tensor(r) for r in (x, *rest)]
        return apply(name, *lifted, **attrs)
    arrays = [np.asarray(v, dtype=np.float64) if not isinstance(v, np.ndarray) else v
              for v in (x, *rest)]
    return get_primitive(name).forward(*arrays, **attrs)


def l2_normalize(x, axis: int = -1):
    """Unit Euclidean norm along ``axis``; raises ZeroNormError on degenerate input."""
    return _dispatch("l2_normalize", x, axis=axis)


def stable_softmax(x, axis: int = -1):
    """Max-subtracted softmax; safe for inputs up to magnitude 1e4."""
    return _dispatch("stable_softmax", x, axis=axis)


def logsumexp(x, axis: int = -1, keepdims: bool = False):
    return _dispatch("logsumexp", x, axis=axis, keepdims=keepdims)


def matmul(a, b):
    return _dispatch("matmul", a, b)


def relu(x):
    return _dispatch("relu", x)


def exp(x):
    return _dispatch("exp", x)


def log(x):
    return _dispatch("log", x)


def clip_min(x, floor: float):
    return _dispatch("clip_min", x, floor=floor)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def conv2d(x, w, padding: int = 1):
    return _dispatch("conv2d", x, w, padding=padding)


def max_pool2d(x, size: int = 2):
    return _dispatch("max_pool2d", x, size=size)
