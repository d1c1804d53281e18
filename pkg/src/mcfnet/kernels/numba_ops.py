"""Numba-compiled kernels: direct-loop implementations of the hot paths.

Each function mirrors the numpy_ops signature and semantics. Loops are
single-threaded, so results are bit-deterministic run to run; accumulation
order (and fastmath contraction) differs from the BLAS path, so
cross-backend agreement is to float tolerance, not bit-exact.
"""

import numpy as np
from numba import njit

from .numpy_ops import interp_axis


@njit(cache=True, inline="always")
def _valid_range(kk, stride, padding, in_size, out_size):
    # output indices o with 0 <= o*stride - padding + kk < in_size
    lo = (padding - kk + stride - 1) // stride
    hi = (in_size - 1 - kk + padding) // stride + 1
    return max(0, lo), min(out_size, hi)


@njit(cache=True, fastmath=True)
def _conv2d_forward(x, w, out, stride, padding):
    # weight tap hoisted so the innermost loop is a contiguous row FMA;
    # the stride-1 branch keeps the indexing trivially unit-stride so it
    # vectorizes
    n, cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    out_h, out_w = out.shape[2], out.shape[3]
    for ni in range(n):
        for co in range(cout):
            for ci in range(cin):
                for ki in range(k):
                    oi_lo, oi_hi = _valid_range(ki, stride, padding, h, out_h)
                    for kj in range(k):
                        oj_lo, oj_hi = _valid_range(kj, stride, padding, wid, out_w)
                        wv = w[co, ci, ki, kj]
                        j0 = kj - padding
                        for oi in range(oi_lo, oi_hi):
                            ii = oi * stride - padding + ki
                            orow = out[ni, co, oi]
                            xrow = x[ni, ci, ii]
                            if stride == 1:
                                for oj in range(oj_lo, oj_hi):
                                    orow[oj] += wv * xrow[j0 + oj]
                            else:
                                for oj in range(oj_lo, oj_hi):
                                    orow[oj] += wv * xrow[j0 + oj * stride]


@njit(cache=True, fastmath=True)
def _conv2d_backward_input(dout, w, dx, stride, padding):
    n, cin, h, wid = dx.shape
    cout, _, k, _ = w.shape
    out_h, out_w = dout.shape[2], dout.shape[3]
    for ni in range(n):
        for co in range(cout):
            for ci in range(cin):
                for ki in range(k):
                    oi_lo, oi_hi = _valid_range(ki, stride, padding, h, out_h)
                    for kj in range(k):
                        oj_lo, oj_hi = _valid_range(kj, stride, padding, wid, out_w)
                        wv = w[co, ci, ki, kj]
                        j0 = kj - padding
                        for oi in range(oi_lo, oi_hi):
                            ii = oi * stride - padding + ki
                            drow = dout[ni, co, oi]
                            xrow = dx[ni, ci, ii]
                            if stride == 1:
                                for oj in range(oj_lo, oj_hi):
                                    xrow[j0 + oj] += wv * drow[oj]
                            else:
                                for oj in range(oj_lo, oj_hi):
                                    xrow[j0 + oj * stride] += wv * drow[oj]


@njit(cache=True, fastmath=True)
def _conv2d_backward_weight(dout, x, dw, stride, padding):
    n, cin, h, wid = x.shape
    cout, _, k, _ = dw.shape
    out_h, out_w = dout.shape[2], dout.shape[3]
    for ni in range(n):
        for co in range(cout):
            for ci in range(cin):
                for ki in range(k):
                    oi_lo, oi_hi = _valid_range(ki, stride, padding, h, out_h)
                    for kj in range(k):
                        oj_lo, oj_hi = _valid_range(kj, stride, padding, wid, out_w)
                        j0 = kj - padding
                        acc = 0.0
                        for oi in range(oi_lo, oi_hi):
                            ii = oi * stride - padding + ki
                            drow = dout[ni, co, oi]
                            xrow = x[ni, ci, ii]
                            if stride == 1:
                                for oj in range(oj_lo, oj_hi):
                                    acc += drow[oj] * xrow[j0 + oj]
                            else:
                                for oj in range(oj_lo, oj_hi):
                                    acc += drow[oj] * xrow[j0 + oj * stride]
                        dw[co, ci, ki, kj] += acc


@njit(cache=True)
def _bilinear_forward(x, y0, y1, wy, x0, x1, wx, out):
    n, c = x.shape[0], x.shape[1]
    out_h, out_w = out.shape[2], out.shape[3]
    for ni in range(n):
        for ci in range(c):
            for i in range(out_h):
                r0, r1, fy = y0[i], y1[i], wy[i]
                for j in range(out_w):
                    c0, c1, fx = x0[j], x1[j], wx[j]
                    top = x[ni, ci, r0, c0] * (1.0 - fx) + x[ni, ci, r0, c1] * fx
                    bot = x[ni, ci, r1, c0] * (1.0 - fx) + x[ni, ci, r1, c1] * fx
                    out[ni, ci, i, j] = top * (1.0 - fy) + bot * fy


@njit(cache=True)
def _bilinear_backward(dout, y0, y1, wy, x0, x1, wx, dx):
    n, c = dout.shape[0], dout.shape[1]
    out_h, out_w = dout.shape[2], dout.shape[3]
    for ni in range(n):
        for ci in range(c):
            for i in range(out_h):
                r0, r1, fy = y0[i], y1[i], wy[i]
                for j in range(out_w):
                    c0, c1, fx = x0[j], x1[j], wx[j]
                    g = dout[ni, ci, i, j]
                    dx[ni, ci, r0, c0] += g * (1.0 - fy) * (1.0 - fx)
                    dx[ni, ci, r0, c1] += g * (1.0 - fy) * fx
                    dx[ni, ci, r1, c0] += g * fy * (1.0 - fx)
                    dx[ni, ci, r1, c1] += g * fy * fx


def conv2d_forward(x, w, bias, stride, padding):
    n, cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wid + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, out_h, out_w), dtype=x.dtype)
    _conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w), out, stride, padding)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_backward_input(dout, w, in_shape, stride, padding):
    dx = np.zeros(in_shape, dtype=dout.dtype)
    _conv2d_backward_input(np.ascontiguousarray(dout), w, dx, stride, padding)
    return dx


def conv2d_backward_weight(dout, x, w_shape, stride, padding):
    dw = np.zeros(w_shape, dtype=dout.dtype)
    _conv2d_backward_weight(np.ascontiguousarray(dout), x, dw, stride, padding)
    return dw


def _axis_tables(in_h, in_w, out_h, out_w, dtype):
    y0, y1, wy = interp_axis(in_h, out_h)
    x0, x1, wx = interp_axis(in_w, out_w)
    return y0, y1, wy.astype(dtype), x0, x1, wx.astype(dtype)


def bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    y0, y1, wy, x0, x1, wx = _axis_tables(h, w, out_h, out_w, x.dtype)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    _bilinear_forward(np.ascontiguousarray(x), y0, y1, wy, x0, x1, wx, out)
    return out


def bilinear_backward(dout, in_h, in_w):
    n, c, out_h, out_w = dout.shape
    y0, y1, wy, x0, x1, wx = _axis_tables(in_h, in_w, out_h, out_w, dout.dtype)
    dx = np.zeros((n, c, in_h, in_w), dtype=dout.dtype)
    _bilinear_backward(np.ascontiguousarray(dout), y0, y1, wy, x0, x1, wx, dx)
    return dx
