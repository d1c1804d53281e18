"""Pure-numpy kernels: the portable fallback backend.

Convolution runs through a strided sliding-window view plus one BLAS
tensordot; bilinear resampling is expressed with per-axis interpolation
matrices so the backward pass is literally the transpose.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _window_view(xp, k, stride, out_h, out_w):
    # read-only (N, C, out_h, out_w, k, k) view over the padded input
    n, c = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, c, out_h, out_w, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, bias, stride, padding):
    n, cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wid + 2 * padding - k) // stride + 1
    win = _window_view(_pad(x, padding), k, stride, out_h, out_w)
    out = np.tensordot(win, w, axes=((1, 4, 5), (1, 2, 3)))  # (n, oh, ow, cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_backward_input(dout, w, in_shape, stride, padding):
    n, cin, h, wid = in_shape
    cout, _, k, _ = w.shape
    out_h, out_w = dout.shape[2], dout.shape[3]
    # (n, oh, ow, cin, k, k) contributions, scattered back per kernel tap
    tmp = np.tensordot(dout, w, axes=((1,), (0,)))
    dxp = np.zeros((n, cin, h + 2 * padding, wid + 2 * padding), dtype=dout.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + out_h * stride:stride, kj:kj + out_w * stride:stride] += \
                tmp[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
    return dxp


def conv2d_backward_weight(dout, x, w_shape, stride, padding):
    cout, cin, k, _ = w_shape
    out_h, out_w = dout.shape[2], dout.shape[3]
    win = _window_view(_pad(x, padding), k, stride, out_h, out_w)
    dw = np.tensordot(dout, win, axes=((0, 2, 3), (0, 2, 3)))
    return np.ascontiguousarray(dw)


def interp_axis(in_size, out_size):
    """Half-pixel-center source indices/weights with edge clamping.

    Returns (i0, i1, w1) such that out[j] = (1 - w1[j]) * v[i0[j]] + w1[j] * v[i1[j]].
    Weights are float64; callers cast as needed.
    """
    scale = in_size / out_size
    coords = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, float(in_size - 1))
    i0 = np.minimum(np.floor(coords).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, coords - i0


def _interp_matrix(in_size, out_size, dtype):
    i0, i1, w1 = interp_axis(in_size, out_size)
    a = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(a, (rows, i0), 1.0 - w1)
    np.add.at(a, (rows, i1), w1)
    return a.astype(dtype)


def bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    ah = _interp_matrix(h, out_h, x.dtype)
    aw = _interp_matrix(w, out_w, x.dtype)
    tmp = np.einsum("oh,nchw->ncow", ah, x, optimize=True)
    return np.einsum("pw,ncow->ncop", aw, tmp, optimize=True)


def bilinear_backward(dout, in_h, in_w):
    n, c, out_h, out_w = dout.shape
    ah = _interp_matrix(in_h, out_h, dout.dtype)
    aw = _interp_matrix(in_w, out_w, dout.dtype)
    tmp = np.einsum("oh,ncop->nchp", ah, dout, optimize=True)
    return np.einsum("pw,nchp->nchw", aw, tmp, optimize=True)
