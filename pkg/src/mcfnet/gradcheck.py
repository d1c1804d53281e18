"""Central finite-difference gradient checking.

Meant to run in 64-bit: the default step (1e-4) drowns in float32 rounding.
The error metric is elementwise |analytic - numeric| / max(1, |numeric|),
so it behaves like an absolute tolerance for sub-unit gradients.
"""

import numpy as np

from .tensor import backward


def gradcheck(loss_fn, tensors, eps=1e-4):
    """Compare analytic gradients of ``loss_fn()`` against central finite
    differences over every element of every tensor in ``tensors``.

    ``loss_fn`` takes no arguments and must rebuild the graph on each call,
    closing over ``tensors``; their ``.data`` is perturbed in place. Returns
    the maximum relative error.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 tensors")
        t.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = [t.grad_or_zeros().copy() for t in tensors]

    max_err = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.ravel()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            flat[i] = orig
            fd[i] = (f_plus - f_minus) / (2.0 * eps)
        err = np.abs(ga.ravel() - fd) / np.maximum(1.0, np.abs(fd))
        max_err = max(max_err, float(err.max()))
    return max_err
