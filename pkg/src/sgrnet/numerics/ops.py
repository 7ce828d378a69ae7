"""Differentiable primitives.

No broadcasting: binary elementwise kinds need equal shapes and any
replication goes through :func:`expand`. ``matmul`` accepts 2-D operands or
3-D operands with equal leading (batch) extents.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, ParameterError
from .tensor import Tensor, apply, as_tensor, primitive

# ---------------------------------------------------------------- matmul


def _matmul_fwd(arrays, attrs):
    a, b = arrays
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise DimensionError(f"matmul needs two 2-D or two 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b, None


def _matmul_bwd(g, arrays, out, saved, attrs, needs):
    a, b = arrays
    ga = g @ np.swapaxes(b, -1, -2) if needs[0] else None
    gb = np.swapaxes(a, -1, -2) @ g if needs[1] else None
    return ga, gb


primitive("matmul")((_matmul_fwd, _matmul_bwd))


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    return apply("matmul", a, as_tensor(b, like=a))


# ---------------------------------------------------------------- elementwise


def _same_shape(a, b, kind):
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _add_fwd(arrays, attrs):
    a, b = arrays
    _same_shape(a, b, "add")
    return a + b, None


def _sub_fwd(arrays, attrs):
    a, b = arrays
    _same_shape(a, b, "sub")
    return a - b, None


def _mul_fwd(arrays, attrs):
    a, b = arrays
    _same_shape(a, b, "hadamard")
    return a * b, None


primitive("add")((_add_fwd, lambda g, arrays, out, saved, attrs, needs: (g, g)))
primitive("sub")((_sub_fwd, lambda g, arrays, out, saved, attrs, needs: (g, -g)))
primitive("mul")((_mul_fwd, lambda g, arrays, out, saved, attrs, needs: (g * arrays[1], g * arrays[0])))


def _scale_fwd(arrays, attrs):
    (x,) = arrays
    f = x.dtype.type(attrs["factor"])
    out = x * f
    if attrs["offset"]:
        out = out + x.dtype.type(attrs["offset"])
    return out, None


primitive("scale")((_scale_fwd, lambda g, arrays, out, saved, attrs, needs: (g * g.dtype.type(attrs["factor"]),)))

primitive("sigmoid")(
    (
        lambda arrays, attrs: (expit(arrays[0]), None),
        lambda g, arrays, out, saved, attrs, needs: (g * out * (1 - out),),
    )
)
primitive("tanh")(
    (
        lambda arrays, attrs: (np.tanh(arrays[0]), None),
        lambda g, arrays, out, saved, attrs, needs: (g * (1 - out * out),),
    )
)
primitive("relu")(
    (
        lambda arrays, attrs: (np.maximum(arrays[0], 0), None),
        lambda g, arrays, out, saved, attrs, needs: (g * (arrays[0] > 0),),
    )
)


def add(a, b) -> Tensor:
    return apply("add", as_tensor(a), as_tensor(b))


def sub(a, b) -> Tensor:
    return apply("sub", as_tensor(a), as_tensor(b))


def hadamard(a, b) -> Tensor:
    return apply("mul", as_tensor(a), as_tensor(b))


def scale(x, factor: float, offset: float = 0.0) -> Tensor:
    """``factor * x + offset``."""
    return apply("scale", as_tensor(x), factor=float(factor), offset=float(offset))


def sigmoid(x) -> Tensor:
    return apply("sigmoid", as_tensor(x))


def tanh(x) -> Tensor:
    return apply("tanh", as_tensor(x))


def relu(x) -> Tensor:
    return apply("relu", as_tensor(x))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"hadamard": hadamard, "add": add, "sub": sub}


def elementwise(kind: str, *inputs, **kwargs) -> Tensor:
    if kind in _UNARY:
        return _UNARY[kind](*inputs)
    if kind in _BINARY:
        return _BINARY[kind](*inputs)
    if kind == "scale":
        return scale(*inputs, **kwargs)
    raise ParameterError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- shape ops


def _sum_fwd(arrays, attrs):
    return np.asarray(arrays[0].sum()), None


primitive("sum")((_sum_fwd, lambda g, arrays, out, saved, attrs, needs: (np.full_like(arrays[0], g),)))


def _reshape_fwd(arrays, attrs):
    (x,) = arrays
    try:
        return x.reshape(attrs["shape"]), None
    except ValueError as exc:
        raise DimensionError(str(exc)) from None


primitive("reshape")((_reshape_fwd, lambda g, arrays, out, saved, attrs, needs: (g.reshape(arrays[0].shape),)))
primitive("transpose")(
    (
        lambda arrays, attrs: (np.ascontiguousarray(np.swapaxes(arrays[0], -1, -2)), None),
        lambda g, arrays, out, saved, attrs, needs: (np.swapaxes(g, -1, -2),),
    )
)


def _concat_fwd(arrays, attrs):
    try:
        return np.concatenate(arrays, axis=attrs["axis"]), None
    except ValueError as exc:
        raise DimensionError(str(exc)) from None


def _concat_bwd(g, arrays, out, saved, attrs, needs):
    axis = attrs["axis"]
    cuts = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


primitive("concat")((_concat_fwd, _concat_bwd))


def _expand_fwd(arrays, attrs):
    (x,) = arrays
    return np.repeat(np.expand_dims(x, attrs["axis"]), attrs["size"], axis=attrs["axis"]), None


primitive("expand")((_expand_fwd, lambda g, arrays, out, saved, attrs, needs: (g.sum(axis=attrs["axis"]),)))


def total(x) -> Tensor:
    """Sum of all entries (scalar)."""
    return apply("sum", as_tensor(x))


def reshape(x, shape) -> Tensor:
    return apply("reshape", as_tensor(x), shape=tuple(shape))


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    return apply("transpose", as_tensor(x))


def concat(tensors, axis: int = 0) -> Tensor:
    return apply("concat", *[as_tensor(t) for t in tensors], axis=axis)


def expand(x, axis: int, size: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``x`` ``size`` times along it."""
    return apply("expand", as_tensor(x), axis=axis, size=int(size))


# ---------------------------------------------------------------- row gather / scatter


def _row_index(idx: np.ndarray, x_shape: tuple, nb: int) -> np.ndarray:
    rest = x_shape[nb + 1:]
    ie = idx.reshape(idx.shape + (1,) * len(rest))
    return np.broadcast_to(ie, idx.shape + tuple(rest))


def _take_fwd(arrays, attrs):
    (x,) = arrays
    idx = attrs["index"]
    nb = idx.ndim - 1
    if x.ndim <= nb or x.shape[:nb] != idx.shape[:nb]:
        raise DimensionError(f"take_rows: index {idx.shape} does not fit tensor {x.shape}")
    return np.take_along_axis(x, _row_index(idx, x.shape, nb), axis=nb), None


def _take_bwd(g, arrays, out, saved, attrs, needs):
    (x,) = arrays
    idx = attrs["index"]
    nb = idx.ndim - 1
    dx = np.zeros_like(x)
    np.put_along_axis(dx, _row_index(idx, x.shape, nb), g, axis=nb)
    return (dx,)


def _scatter_fwd(arrays, attrs):
    (h,) = arrays
    idx, n = attrs["index"], attrs["n"]
    nb = idx.ndim - 1
    if h.shape[: nb + 1] != idx.shape:
        raise DimensionError(f"scatter_rows: index {idx.shape} does not fit tensor {h.shape}")
    shape = h.shape[:nb] + (n,) + h.shape[nb + 1:]
    out = np.zeros(shape, dtype=h.dtype)
    np.put_along_axis(out, _row_index(idx, shape, nb), h, axis=nb)
    return out, None


def _scatter_bwd(g, arrays, out, saved, attrs, needs):
    idx = attrs["index"]
    nb = idx.ndim - 1
    return (np.take_along_axis(g, _row_index(idx, g.shape, nb), axis=nb),)


primitive("take_rows")((_take_fwd, _take_bwd))
primitive("scatter_rows")((_scatter_fwd, _scatter_bwd))


def take_rows(x, index) -> Tensor:
    """Select rows along the node axis.

    ``index`` has shape ``batch + (k,)`` and addresses axis ``len(batch)`` of
    ``x``. Indices within one row of ``index`` must be distinct.
    """
    index = np.asarray(index, dtype=np.intp)
    return apply("take_rows", as_tensor(x), index=index)


def scatter_rows(h, index, n: int) -> Tensor:
    """Inverse of :func:`take_rows`: place rows of ``h`` into a zero tensor with ``n`` rows."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= n):
        raise DimensionError(f"scatter_rows: index out of range for {n} rows")
    return apply("scatter_rows", as_tensor(h), index=index, n=int(n))


# ---------------------------------------------------------------- conv3d


def conv_output_extent(length: int, k: int, mode: str, dilation: int) -> tuple[int, int, int]:
    """Return ``(out_length, pad_before, pad_after)`` for one axis."""
    if mode not in ("valid", "same"):
        raise ParameterError(f"padding mode must be 'valid' or 'same', got {mode!r}")
    if k < 1 or dilation < 1:
        raise ParameterError("kernel extent and dilation must be positive")
    span = dilation * (k - 1) + 1
    if mode == "same":
        lo = (span - 1) // 2
        return length, lo, span - 1 - lo
    out = length - span + 1
    if out < 1:
        raise DimensionError(f"dilated kernel extent {span} exceeds input extent {length}")
    return out, 0, 0


def _conv_layout(x_shape, w_shape, attrs):
    n, cin, d, h, wd = x_shape
    cout, wcin, kd, kh, kw = w_shape
    if wcin != cin:
        raise DimensionError(f"conv3d: kernel expects {wcin} input channels, input has {cin}")
    pad, dil = attrs["pad"], attrs["dilation"]
    (do, d0, d1), (ho, h0, h1), (wo, w0, w1) = (
        conv_output_extent(L, k, m, r) for L, k, m, r in zip((d, h, wd), (kd, kh, kw), pad, dil)
    )
    dp, hp, wp = d + d0 + d1, h + h0 + h1, wd + w0 + w1
    dd, dh, dw = dil
    plane = hp * wp
    length = dp * plane
    spatial = [a * dh * wp + b * dw for a in range(kh) for b in range(kw)]
    n_cols = length - spatial[-1]
    n_out = n_cols - (kd - 1) * dd * plane
    return dict(
        pads=((d0, d1), (h0, h1), (w0, w1)), out=(do, ho, wo), padded=(dp, hp, wp),
        plane=plane, length=length, spatial=spatial, n_cols=n_cols, n_out=n_out, step=dd * plane,
    )


def _im2col(flat, lay):
    """Rows ordered (kh, kw, cin): ``cols[(a, b, c), n, i] = flat[c, n, i + offset(a, b)]``."""
    cin, n, _ = flat.shape
    nc = lay["n_cols"]
    cols = np.empty((len(lay["spatial"]), cin, n, nc), dtype=flat.dtype)
    for j, off in enumerate(lay["spatial"]):
        cols[j] = flat[:, :, off: off + nc]
    return cols.reshape(-1, n * nc)


def _conv3d_fwd(arrays, attrs):
    # Convolution on the flattened padded grid: every tap is a constant
    # offset along one axis, so all copies and sums run over contiguous
    # memory. Grid positions that are not valid outputs are cropped at the end.
    x, w = arrays
    single = x.ndim == 4
    if single:
        x = x[None]
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d needs input (N,)Cin,D,H,W and kernel Cout,Cin,kd,kh,kw; got {arrays[0].shape}, {w.shape}")
    lay = _conv_layout(x.shape, w.shape, attrs)
    n, cin = x.shape[:2]
    cout, _, kd, kh, kw = w.shape
    dtype = np.result_type(x, w)
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0)) + lay["pads"])
    flat = np.ascontiguousarray(xp.transpose(1, 0, 2, 3, 4)).reshape(cin, n, lay["length"])
    cols = _im2col(flat, lay)
    wt = w.astype(dtype, copy=False).transpose(2, 0, 3, 4, 1).reshape(kd * cout, kh * kw * cin)
    taps = (wt @ cols).reshape(kd, cout, n, lay["n_cols"])
    no, step = lay["n_out"], lay["step"]
    grid = taps[0, :, :, :no].copy()
    for t in range(1, kd):
        grid += taps[t, :, :, t * step: t * step + no]
    do, ho, wo = lay["out"]
    _, hp, wp = lay["padded"]
    full = np.zeros((cout, n, do * lay["plane"]), dtype=dtype)
    full[:, :, :no] = grid
    out = full.reshape(cout, n, do, hp, wp)[:, :, :, :ho, :wo].transpose(1, 0, 2, 3, 4)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]
    return out, (flat, wt, lay)


def _conv3d_bwd(g, arrays, out, saved, attrs, needs):
    x, w = arrays
    flat, wt, lay = saved
    if g.ndim == 4:
        g = g[None]
    n, cout, do, ho, wo = g.shape
    _, cin, kd, kh, kw = w.shape
    _, hp, wp = lay["padded"]
    nc, no, step = lay["n_cols"], lay["n_out"], lay["step"]
    full = np.zeros((cout, n, do, hp, wp), dtype=flat.dtype)
    full[:, :, :, :ho, :wo] = g.transpose(1, 0, 2, 3, 4)
    grid = full.reshape(cout, n, -1)[:, :, :no]
    gt = np.zeros((kd, cout, n, nc), dtype=flat.dtype)
    for t in range(kd):
        gt[t, :, :, t * step: t * step + no] = grid
    gt = gt.reshape(kd * cout, n * nc)
    dw_ = None
    if needs[1]:
        cols = _im2col(flat, lay)
        dw_ = (gt @ cols.T).reshape(kd, cout, kh, kw, cin).transpose(1, 4, 0, 2, 3)
        dw_ = np.ascontiguousarray(dw_)
    dx = None
    if needs[0]:
        dcols = (wt.T @ gt).reshape(kh * kw, cin, n, nc)
        dflat = np.zeros_like(flat)
        for j, off in enumerate(lay["spatial"]):
            dflat[:, :, off: off + nc] += dcols[j]
        dp = lay["padded"][0]
        dxp = dflat.reshape(cin, n, dp, hp, wp).transpose(1, 0, 2, 3, 4)
        (d0, _), (h0, _), (w0, _) = lay["pads"]
        d, h, wd = x.shape[-3:]
        dx = np.ascontiguousarray(dxp[:, :, d0: d0 + d, h0: h0 + h, w0: w0 + wd])
        if x.ndim == 4:
            dx = dx[0]
    return dx, dw_


primitive("conv3d")((_conv3d_fwd, _conv3d_bwd))


def conv3d(x, kernel, pad=("valid", "valid", "valid"), dilation=(1, 1, 1)) -> Tensor:
    """3-D cross-correlation over (depth, height, width).

    ``x`` is ``Cin×D×H×W`` or batched ``N×Cin×D×H×W``; ``kernel`` is
    ``Cout×Cin×kd×kh×kw``. ``pad`` holds one of ``"valid"``/``"same"`` per
    axis (``"same"`` zero-pads to keep the extent), ``dilation`` one positive
    int per axis.
    """
    if isinstance(pad, str):
        pad = (pad,) * 3
    if isinstance(dilation, int):
        dilation = (dilation,) * 3
    x = as_tensor(x)
    return apply("conv3d", x, as_tensor(kernel, like=x), pad=tuple(pad), dilation=tuple(int(r) for r in dilation))


# ---------------------------------------------------------------- loss


def _xent_fwd(arrays, attrs):
    (z,) = arrays
    labels = attrs["labels"]
    single = z.ndim == 1
    z2 = z[None] if single else z
    if z2.ndim != 2 or labels.shape != (z2.shape[0],):
        raise DimensionError(f"cross-entropy: logits {z.shape} vs labels {labels.shape}")
    k = z2.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"class index out of range [0, {k})")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(z2.shape[0])
    losses = np.log(s[:, 0]) - shifted[rows, labels]
    return np.asarray(losses.mean(), dtype=z.dtype), e / s


def _xent_bwd(g, arrays, out, saved, attrs, needs):
    (z,) = arrays
    p = saved.copy()
    labels = attrs["labels"]
    p[np.arange(p.shape[0]), labels] -= 1
    p *= g / p.shape[0]
    return (p[0] if z.ndim == 1 else p,)


primitive("softmax_cross_entropy")((_xent_fwd, _xent_bwd))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch.

    ``logits`` is ``K`` with an int label, or ``B×K`` with ``B`` labels.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    return apply("softmax_cross_entropy", as_tensor(logits), labels=labels)
