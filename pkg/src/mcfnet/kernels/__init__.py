"""Kernel backend selection.

The hot numeric kernels (convolution and bilinear resampling) exist twice:
a numba @njit direct-loop version and a vectorized numpy version. The env
var ``MCF_BACKEND`` picks one at import time (``numba`` or ``numpy``);
``set_backend`` switches at runtime (used by tests and the kernel
benchmark).

The default is numpy: benchmarks/kernel_bench.py shows the BLAS-backed
sliding-window convolution beating the scalar jit loops by an order of
magnitude at this architecture's shapes, while numba only wins the strided
resize gathers. Both backends stay tested for agreement.
"""

import os
import warnings

from . import numpy_ops

_BACKENDS = {"numpy": numpy_ops}

try:
    from . import numba_ops
    _BACKENDS["numba"] = numba_ops
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba_ops = None

_DEFAULT = "numpy"

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend by name ('numpy' or 'numba')."""
    global _active_name, _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]


def backend_name():
    return _active_name


def conv2d_forward(x, w, bias, stride, padding):
    return _active.conv2d_forward(x, w, bias, stride, padding)


def conv2d_backward_input(dout, w, in_shape, stride, padding):
    return _active.conv2d_backward_input(dout, w, in_shape, stride, padding)


def conv2d_backward_weight(dout, x, w_shape, stride, padding):
    return _active.conv2d_backward_weight(dout, x, w_shape, stride, padding)


def bilinear_forward(x, out_h, out_w):
    return _active.bilinear_forward(x, out_h, out_w)


def bilinear_backward(dout, in_h, in_w):
    return _active.bilinear_backward(dout, in_h, in_w)


_env = os.environ.get("MCF_BACKEND", "").strip().lower()
if _env:
    if _env in _BACKENDS:
        set_backend(_env)
    else:
        warnings.warn(f"MCF_BACKEND={_env!r} not available, using {_DEFAULT!r}", RuntimeWarning)
        set_backend(_DEFAULT)
else:
    set_backend(_DEFAULT)
