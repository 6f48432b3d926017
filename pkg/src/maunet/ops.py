"""Differentiable kernels on NCHW tensors.

Every function takes and returns :class:`~maunet.tensor.Tensor` values and
records a backward closure when a tape is active.  Broadcasting is limited to
identical shapes or a 0-d scalar operand; anything wider goes through
:func:`expand` so the widening is visible at the call site.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, DimensionError, UsageError
from .tensor import Tensor, check_same_dtype, record

__all__ = [
    "conv2d",
    "max_pool2d",
    "bilinear_upsample",
    "interp_matrix",
    "softmax",
    "layer_norm",
    "matmul",
    "relu",
    "sigmoid",
    "add",
    "mul",
    "scale",
    "concat",
    "take",
    "reshape",
    "transpose",
    "expand",
    "subsample2d",
    "sum",
    "mean",
    "binary_cross_entropy",
]

_AXIS_NAMES = ("N", "C", "H", "W")


def _need4d(t: Tensor, what: str) -> None:
    if t.ndim != 4:
        raise DimensionError(f"{what} must be 4-D (N,C,H,W), got shape {t.shape}")


def _out_size(size: int, k: int, stride: int, padding: int, axis: str) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"axis {axis}: (size {size} + 2*padding {padding} - kernel {k}) / stride {stride} "
            "is not a non-negative integer"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip)."""
    _need4d(x, "conv2d input")
    _need4d(weight, "conv2d weight")
    check_same_dtype(x, weight, *([bias] if bias is not None else []))
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise DimensionError(f"conv2d axis C: input has {c} channels, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho = _out_size(h, kh, stride, padding, "H")
    wo = _out_size(w, kw, stride, padding, "W")

    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # N,C,Ho,Wo,kh,kw
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bwd(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dwin = np.tensordot(g, weight.data, axes=([1], [0]))  # N,Ho,Wo,C,kh,kw
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dwin[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = dxp[:, :, p : p + h, p : p + w]
        return gx, gw, gb

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return record("conv2d", out, inputs, bwd)


def max_pool2d(x: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    """Max over k x k windows; gradient goes to the first maximal element."""
    _need4d(x, "max_pool2d input")
    s = k if stride is None else stride
    n, c, h, w = x.shape
    ho = _out_size(h, k, s, 0, "H")
    wo = _out_size(w, k, s, 0, "W")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros(x.shape, dtype=g.dtype)
        for a in range(k):
            for b in range(k):
                dx[:, :, a : a + s * (ho - 1) + 1 : s, b : b + s * (wo - 1) + 1 : s] += dflat[..., a * k + b]
        return (dx,)

    return record("max_pool2d", out, [x], bwd, signature=idx)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights, half-pixel convention."""
    ratio = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * ratio - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m.astype(dtype)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize to (out_h, out_w), align_corners=False."""
    _need4d(x, "bilinear_upsample input")
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ConfigError(f"bilinear_upsample only enlarges: {h}x{w} -> {out_h}x{out_w} requested")
    mh = interp_matrix(h, out_h, x.dtype)
    mw = interp_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def bwd(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return record("bilinear_upsample", out, [x], bwd)


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, [x], bwd)


def layer_norm(x: Tensor, axes: Sequence[int], gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axes`` to zero mean / unit variance, then apply gain and offset.

    ``gain`` and ``offset`` have the shape of the normalized axes, in order.
    """
    axes = tuple(sorted(_axis(x, a) for a in axes))
    if not axes or len(set(axes)) != len(axes):
        raise ConfigError(f"layer_norm needs a non-empty set of distinct axes, got {axes}")
    norm_shape = tuple(x.shape[a] for a in axes)
    if 0 in norm_shape:
        raise ConfigError(f"layer_norm over an empty slice (axes {axes}, shape {x.shape})")
    for name, t in (("gain", gain), ("offset", offset)):
        if t.shape != norm_shape:
            raise DimensionError(f"layer_norm {name} shape {t.shape} != normalized shape {norm_shape}")
    check_same_dtype(x, gain, offset)
    bshape = [1] * x.ndim
    for a in axes:
        bshape[a] = x.shape[a]
    gb = gain.data.reshape(bshape)
    ob = offset.data.reshape(bshape)
    other = tuple(a for a in range(x.ndim) if a not in axes)

    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gb + ob

    def bwd(g):
        gx = ggain = goff = None
        if x.requires_grad:
            gh = g * gb
            gx = inv * (gh - gh.mean(axis=axes, keepdims=True) - xhat * (gh * xhat).mean(axis=axes, keepdims=True))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=other).reshape(norm_shape) if other else (g * xhat).reshape(norm_shape)
        if offset.requires_grad:
            goff = g.sum(axis=other).reshape(norm_shape) if other else g.reshape(norm_shape)
        return gx, ggain, goff

    return record("layer_norm", out, [x, gain, offset], bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; batch axes must match."""
    check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape[-1]} vs {b.shape[-2]}")
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return record("matmul", out, [a, b], bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def bwd(g):
        return (g * mask,)

    return record("relu", out, [x], bwd, signature=mask)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-log(1 + e^-x)) never overflows
    y = np.exp(-np.logaddexp(0, -x.data))

    def bwd(g):
        return (g * y * (1 - y),)

    return record("sigmoid", y, [x], bwd)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    check_same_dtype(a, b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only 0-d scalars broadcast)")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    return np.asarray(g.sum(), dtype=g.dtype) if t.ndim == 0 and g.ndim != 0 else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return record("add", out, [a, b], bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        ga = _unbroadcast(g * b.data, a) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return record("mul", out, [a, b], bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant (not differentiated)."""
    f = x.dtype.type(factor)
    with np.errstate(over="ignore"):  # overflow is reported as NumericalError below
        out = x.data * f

    def bwd(g):
        return (g * f,)

    return record("scale", out, [x], bwd)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise UsageError("concat of an empty list")
    check_same_dtype(*tensors)
    ax = _axis(tensors[0], axis)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat along axis {ax}: shapes {ref} and {t.shape} disagree off-axis")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bwd(g):
        return [np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])]

    return record("concat", out, list(tensors), bwd)


def take(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    ax = _axis(x, axis)
    if not 0 <= start < stop <= x.shape[ax]:
        raise DimensionError(f"take [{start}:{stop}] out of range for axis {ax} of size {x.shape[ax]}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def bwd(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return record("take", out, [x], bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from e

    def bwd(g):
        return (g.reshape(x.shape),)

    return record("reshape", out, [x], bwd)


def transpose(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(perm)
    if sorted(perm) != list(range(x.ndim)):
        raise DimensionError(f"transpose permutation {perm} invalid for {x.ndim}-D tensor")
    inverse = tuple(np.argsort(perm))
    out = x.data.transpose(perm)

    def bwd(g):
        return (g.transpose(inverse),)

    return record("transpose", out, [x], bwd)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes up to ``shape``; the explicit form of broadcasting."""
    shape = tuple(shape)
    if len(shape) != x.ndim or any(s != d and s != 1 for s, d in zip(x.shape, shape)):
        raise DimensionError(f"expand only grows size-1 axes: {x.shape} -> {shape}")
    grown = tuple(i for i, (s, d) in enumerate(zip(x.shape, shape)) if s != d)
    out = np.broadcast_to(x.data, shape)

    def bwd(g):
        return (g.sum(axis=grown, keepdims=True) if grown else g,)

    return record("expand", out, [x], bwd)


def subsample2d(x: Tensor, step: int) -> Tensor:
    """Keep every ``step``-th row and column (the sampling grid of a strided 1x1 conv)."""
    _need4d(x, "subsample2d input")
    out = x.data[:, :, ::step, ::step]

    def bwd(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, ::step, ::step] = g
        return (gx,)

    return record("subsample2d", out, [x], bwd)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)

    def bwd(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return record("sum", out, [x], bwd)


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.dtype)

    def bwd(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return record("mean", out, [x], bwd)


def binary_cross_entropy(pre: Tensor, target, reduction: str = "mean", clamp: float = 1e-7) -> Tensor:
    """Pixelwise BCE of probabilities ``pre`` against a binary ``target``.

    ``pre`` is clamped to ``[clamp, 1 - clamp]`` first; clamped pixels pass no
    gradient.  ``reduction="sum"`` is the plain double sum over pixels and
    batch, ``"mean"`` divides that by the element count.
    """
    gt = np.asarray(target.data if isinstance(target, Tensor) else target)
    if gt.shape != pre.shape:
        raise DimensionError(f"bce: prediction {pre.shape} vs target {gt.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise DataError("bce target must contain only 0 and 1")
    if reduction not in ("sum", "mean"):
        raise UsageError(f"unknown reduction {reduction!r}")
    dt = pre.dtype
    gt = gt.astype(dt)
    lo, hi = dt.type(clamp), dt.type(1) - dt.type(clamp)
    inside = (pre.data >= lo) & (pre.data <= hi)
    p = np.clip(pre.data, lo, hi)
    terms = -(gt * np.log(p) + (1 - gt) * np.log1p(-p))
    total = terms.sum(dtype=np.float64)
    denom = 1 if reduction == "sum" else pre.size
    out = np.asarray(total / denom, dtype=dt)

    def bwd(g):
        dp = (p - gt) / (p * (1 - p))
        return (np.where(inside, dp, 0).astype(dt) * (g / dt.type(denom)),)

    return record("bce", out, [pre], bwd, signature=inside)
