"""Parameter containers and the basic conv/norm building blocks.

Modules register Parameters and child Modules as plain attributes; the
dotted parameter paths come from attribute names, so construction order is
the (deterministic) initialization order.
"""

import numpy as np

from . import ops
from .ops import RunningStats
from .tensor import Tensor


class Parameter(Tensor):
    """Learnable tensor; values are filled by init_parameters."""

    def __init__(self, shape, dtype=np.float32):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name


def _walk_value(val, path, want):
    if isinstance(val, Parameter):
        if want == "param":
            yield path, val
    elif isinstance(val, RunningStats):
        if want == "buffer":
            yield path + ".running_mean", val
            yield path + ".running_var", val
    elif isinstance(val, Module):
        yield from val._walk(path, want)
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk_value(item, f"{path}.{i}", want)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _walk(self, prefix, want):
        for name, val in vars(self).items():
            yield from _walk_value(val, _join(prefix, name), want)

    def named_parameters(self, prefix=""):
        yield from self._walk(prefix, "param")

    def named_buffers(self, prefix=""):
        """Yield (name, array) for persistent non-learnable state."""
        for path, stats in self._walk(prefix, "buffer"):
            yield path, stats.mean if path.endswith(".running_mean") else stats.var

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype):
        """Cast all parameters and buffers (used by 64-bit gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for path, stats in self._walk("", "buffer"):
            if path.endswith(".running_mean"):
                stats.mean = stats.mean.astype(dtype)
            else:
                stats.var = stats.var.astype(dtype)
        return self

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        self.weight = Parameter((out_channels, in_channels, kernel_size, kernel_size))
        self.bias = Parameter((out_channels,)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x, training=False):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.gamma = Parameter((channels,))
        self.beta = Parameter((channels,))
        self.stats = RunningStats(channels)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x, training=False):
        return ops.batch_norm2d(x, self.gamma, self.beta, self.stats, training,
                                self.eps, self.momentum)


class ConvBNReLU(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, padding)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x, training=False):
        return ops.relu(self.bn(self.conv(x), training))


def init_parameters(module, seed):
    """Fill parameters in place: conv weights fan-out-scaled normal, BN gamma
    one, everything else (biases, beta) zero. Deterministic under seed."""
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if p.data.ndim == 4:
            cout, _, kh, kw = p.data.shape
            std = np.sqrt(2.0 / (cout * kh * kw))
            p.data = (rng.standard_normal(p.data.shape) * std).astype(p.data.dtype)
        elif name.endswith(".gamma"):
            p.data = np.ones_like(p.data)
        else:
            p.data = np.zeros_like(p.data)
    return module
