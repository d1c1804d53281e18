"""Differentiable ops over Tensors: conv, batch norm, resize, pointwise.

Broadcasting is deliberately restricted: add/mul accept identical shapes or
an N x C x 1 x 1 gate against an N x C x H x W map, nothing else. Every op
returns fresh arrays from its backward closure.
"""

import numpy as np

from . import kernels, profiling
from .tensor import ShapeError, Tensor, from_op


def _sigmoid_stable(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _require_4d(x, op):
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects an N x C x H x W tensor, got shape {x.data.shape}")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D convolution with zero padding.

    Output extent per axis: (size + 2 * padding - k) // stride + 1.
    Differentiable w.r.t. input, weight and bias.
    """
    _require_4d(x, "conv2d")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ShapeError(f"conv2d weight must be C_out x C_in x k x k, got {weight.data.shape}")
    n, cin, h, w = x.data.shape
    cout, wcin, k, _ = weight.data.shape
    if wcin != cin:
        raise ShapeError(f"conv2d input has {cin} channels but weight expects {wcin}")
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"conv2d invalid geometry: k={k}, stride={stride}, padding={padding}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d kernel {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")

    bias_data = bias.data if bias is not None else None
    out = kernels.conv2d_forward(x.data, weight.data, bias_data, stride, padding)
    profiling.add_macs("conv2d", out.shape[0] * cout * out.shape[2] * out.shape[3] * cin * k * k)

    x_data, w_data = x.data, weight.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        dx = kernels.conv2d_backward_input(g, w_data, x_data.shape, stride, padding) \
            if parents[0].requires_grad else None
        dw = kernels.conv2d_backward_weight(g, x_data, w_data.shape, stride, padding) \
            if parents[1].requires_grad else None
        if bias is None:
            return dx, dw
        db = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return dx, dw, db

    return from_op(out, parents, backward_fn, "conv2d")


class RunningStats:
    """Per-channel running mean/variance for batch norm eval mode."""

    def __init__(self, channels, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def astype(self, dtype):
        out = RunningStats(self.mean.shape[0], dtype)
        out.mean = self.mean.astype(dtype)
        out.var = self.var.astype(dtype)
        return out


def batch_norm2d(x, gamma, beta, running_stats, training, eps=1e-5, momentum=0.1):
    """Per-channel normalization over N, H, W.

    Training mode normalizes with biased batch statistics and updates
    ``running_stats`` in place (unbiased variance, factor ``momentum``);
    eval mode normalizes with the stored running statistics.
    """
    _require_4d(x, "batch_norm2d")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm2d gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise ShapeError("batch_norm2d requires eps > 0")
    m = n * h * w
    if training and m < 2:
        raise ShapeError(f"batch_norm2d training mode needs N*H*W >= 2 per channel, got {m}")

    gname = "batch_norm2d"
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None, None]) * invstd[None, :, None, None]
        if running_stats is not None:
            unbiased = var * (m / (m - 1))
            running_stats.mean += momentum * (mean.astype(running_stats.mean.dtype) - running_stats.mean)
            running_stats.var += momentum * (unbiased.astype(running_stats.var.dtype) - running_stats.var)
    else:
        invstd = 1.0 / np.sqrt(running_stats.var.astype(x.data.dtype) + eps)
        xhat = (x.data - running_stats.mean.astype(x.data.dtype)[None, :, None, None]) \
            * invstd[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    profiling.add_macs(gname, x.data.size)

    def backward_fn(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        if not x.requires_grad:
            return None, dgamma, dbeta
        gscaled = g * gamma.data[None, :, None, None]
        if training:
            sum_g = gscaled.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (gscaled * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (invstd[None, :, None, None] / m) * (m * gscaled - sum_g - xhat * sum_gx)
        else:
            dx = gscaled * invstd[None, :, None, None]
        return dx, dgamma, dbeta

    return from_op(out, (x, gamma, beta), backward_fn, gname)


def bilinear_resize(x, out_h, out_w):
    """Half-pixel-center bilinear resampling with edge clamping."""
    _require_4d(x, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize target {out_h}x{out_w} must be >= 1x1")
    n, c, h, w = x.data.shape
    if (out_h, out_w) == (h, w):
        out = x.data.copy()

        def backward_fn(g):
            return (g.copy(),)
    else:
        out = kernels.bilinear_forward(x.data, out_h, out_w)

        def backward_fn(g):
            return (kernels.bilinear_backward(g, h, w),)

    profiling.add_macs("bilinear_resize", 4 * n * c * out_h * out_w)
    return from_op(out, (x,), backward_fn, "bilinear_resize")


def relu(x):
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return from_op(out, (x,), backward_fn, "relu")


def sigmoid(x):
    out = _sigmoid_stable(x.data)

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return from_op(out, (x,), backward_fn, "sigmoid")


def _gate_axis(sa, sb, op):
    """Return which operand broadcasts: 0, 1, or None for same-shape."""
    if sa == sb:
        return None
    if len(sa) == 4 and len(sb) == 4 and sa[0] == sb[0] and sa[1] == sb[1]:
        if sa[2:] == (1, 1):
            return 0
        if sb[2:] == (1, 1):
            return 1
    raise ShapeError(
        f"{op} supports identical shapes or an N x C x 1 x 1 gate against "
        f"N x C x H x W, got {sa} vs {sb}"
    )


def add(a, b):
    gate = _gate_axis(a.data.shape, b.data.shape, "add")
    out = a.data + b.data
    profiling.add_macs("add", out.size)

    def backward_fn(g):
        ga = g.sum(axis=(2, 3), keepdims=True) if gate == 0 else g.copy()
        gb = g.sum(axis=(2, 3), keepdims=True) if gate == 1 else g.copy()
        return ga, gb

    return from_op(out, (a, b), backward_fn, "add")


def mul(a, b):
    gate = _gate_axis(a.data.shape, b.data.shape, "mul")
    out = a.data * b.data
    profiling.add_macs("mul", out.size)
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        ga = g * b_data
        gb = g * a_data
        if gate == 0:
            ga = ga.sum(axis=(2, 3), keepdims=True)
        elif gate == 1:
            gb = gb.sum(axis=(2, 3), keepdims=True)
        return ga, gb

    return from_op(out, (a, b), backward_fn, "mul")


def scale(x, s):
    """Multiply by a plain Python scalar (not tracked)."""
    s = float(s)
    out = x.data * s
    profiling.add_macs("mul", out.size)

    def backward_fn(g):
        return (g * s,)

    return from_op(out, (x,), backward_fn, "scale")


def concat_channels(a, b):
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    sa, sb = a.data.shape, b.data.shape
    if (sa[0],) + sa[2:] != (sb[0],) + sb[2:]:
        raise ShapeError(f"concat_channels requires matching N, H, W: {sa} vs {sb}")
    out = np.concatenate([a.data, b.data], axis=1)
    ca = sa[1]

    def backward_fn(g):
        return np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])

    return from_op(out, (a, b), backward_fn, "concat_channels")


def slice_channels(x, start, stop):
    _require_4d(x, "slice_channels")
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice_channels [{start}:{stop}] out of range for {c} channels")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return from_op(out, (x,), backward_fn, "slice_channels")


def global_avg_pool(x):
    """N x C x H x W -> N x C x 1 x 1 spatial mean."""
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    profiling.add_macs("global_avg_pool", x.data.size)
    inv = 1.0 / (h * w)

    def backward_fn(g):
        return (np.broadcast_to(g * inv, x.data.shape).copy(),)

    return from_op(out, (x,), backward_fn, "global_avg_pool")


def sum_all(x):
    """Reduce to a scalar; the usual loss-head terminal."""
    out = np.asarray(x.data.sum())

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype).copy(),)

    return from_op(out, (x,), backward_fn, "sum_all")
