"""Covariance-derived channel gating: the fusion, refinement and multi-scale
gate blocks built on per-channel spatial covariance.

All gates are sigmoid outputs, so mask values live strictly in (0, 1); the
blocks degrade to plain 0.5-scaled passthrough when their gate-path weights
are zero.
"""

import numpy as np

from . import ops, profiling
from .modules import Conv2d, Module
from .tensor import ShapeError, from_op


def channel_covariance(x, y):
    """Unbiased covariance between two maps, per sample and channel, across
    the H*W spatial positions. Returns an N x C x 1 x 1 tensor.

    cov(x, x) is the unbiased spatial variance, hence non-negative; swapping
    the arguments is bit-exact by construction.
    """
    if x.data.shape != y.data.shape:
        raise ShapeError(f"channel_covariance needs identical shapes, got {x.data.shape} vs {y.data.shape}")
    if x.data.ndim != 4:
        raise ShapeError(f"channel_covariance expects N x C x H x W, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h * w < 2:
        raise ShapeError(f"channel_covariance needs H*W >= 2 spatial positions, got {h}x{w}")
    denom = h * w - 1
    xc = x.data - x.data.mean(axis=(2, 3), keepdims=True)
    yc = y.data - y.data.mean(axis=(2, 3), keepdims=True)
    out = (xc * yc).sum(axis=(2, 3), keepdims=True) / denom
    profiling.add_macs("channel_covariance", x.data.size)

    def backward_fn(g):
        # centered-sum terms vanish: d cov / d x_i = (y_i - mean(y)) / (n - 1)
        gx = g * yc / denom if x.requires_grad else None
        gy = g * xc / denom if y.requires_grad else None
        return gx, gy

    return from_op(out, (x, y), backward_fn, "channel_covariance")


class AdjustmentBlock(Module):
    """Squeeze-expand 1x1 conv pair with ReLU between, applied to N x C x 1 x 1
    covariance vectors; output shape equals input shape."""

    def __init__(self, channels, reduction=4):
        hidden = max(1, channels // reduction)
        self.reduce = Conv2d(channels, hidden, 1)
        self.expand = Conv2d(hidden, channels, 1)
        self.channels = channels

    def forward(self, v, training=False):
        if v.data.ndim != 4 or v.data.shape[1] != self.channels:
            raise ShapeError(f"adjust expects N x {self.channels} x 1 x 1, got {v.data.shape}")
        return self.expand(ops.relu(self.reduce(v)))


class CFFM(Module):
    """Two-branch covariance feature fusion.

    Right branch: project both maps to a common width, pull the low-level
    projection down to the high-level grid, take the channel covariance and
    turn it into a sigmoid gate. Left branch mirrors it at the low-level
    grid. The gates multiply the original (unprojected) maps and the gated
    high-level map is upsampled before concatenation.

    ``prose_variant`` swaps which map each gate multiplies (the alternative
    reading of the branch outputs); gate conv widths follow the swap.
    """

    def __init__(self, high_channels, low_channels, fused_channels, reduction=4,
                 prose_variant=False):
        self.proj_high = Conv2d(high_channels, fused_channels, 1)
        self.proj_low = Conv2d(low_channels, fused_channels, 1)
        self.adjust_high = AdjustmentBlock(fused_channels, reduction)
        self.adjust_low = AdjustmentBlock(fused_channels, reduction)
        gate_a_channels = low_channels if prose_variant else high_channels
        gate_b_channels = high_channels if prose_variant else low_channels
        self.mask_high = Conv2d(fused_channels, gate_a_channels, 3, padding=1)
        self.mask_low = Conv2d(fused_channels, gate_b_channels, 3, padding=1)
        self.high_channels = high_channels
        self.low_channels = low_channels
        self.prose_variant = prose_variant

    def forward(self, x_high, x_low, training=False):
        nh, ch, hh, wh = x_high.data.shape
        nl, cl, hl, wl = x_low.data.shape
        if ch != self.high_channels or cl != self.low_channels:
            raise ShapeError(
                f"CFFM configured for {self.high_channels}/{self.low_channels} channels, "
                f"got {ch}/{cl}")
        if nh != nl:
            raise ShapeError(f"CFFM batch mismatch: {nh} vs {nl}")
        if hl < hh or wl < wh:
            raise ShapeError(f"CFFM expects the low-level map at >= resolution: {hh}x{wh} vs {hl}x{wl}")

        ph = self.proj_high(x_high)
        pl = self.proj_low(x_low)

        v_high = channel_covariance(ph, ops.bilinear_resize(pl, hh, wh))
        gate_a = ops.sigmoid(self.mask_high(self.adjust_high(v_high)))

        v_low = channel_covariance(ops.bilinear_resize(ph, hl, wl), pl)
        gate_b = ops.sigmoid(self.mask_low(self.adjust_low(v_low)))

        if self.prose_variant:
            gated_high, gated_low = ops.mul(gate_b, x_high), ops.mul(gate_a, x_low)
        else:
            gated_high, gated_low = ops.mul(gate_a, x_high), ops.mul(gate_b, x_low)
        return ops.concat_channels(ops.bilinear_resize(gated_high, hl, wl), gated_low)


class CFRM(Module):
    """Self-covariance refinement: the map's own channel variance drives a
    sigmoid gate that multiplies a 3x3-convolved copy of the map."""

    def __init__(self, channels, reduction=4):
        self.adjust = AdjustmentBlock(channels, reduction)
        self.mask = Conv2d(channels, channels, 3, padding=1)
        self.refine = Conv2d(channels, channels, 3, padding=1)
        self.channels = channels

    def forward(self, x, training=False):
        if x.data.shape[1] != self.channels:
            raise ShapeError(f"CFRM configured for {self.channels} channels, got {x.data.shape[1]}")
        v = channel_covariance(x, x)
        gate = ops.sigmoid(self.mask(self.adjust(v)))
        return ops.mul(gate, self.refine(x))


class LGate(Module):
    """Forgetting-gate fusion of three pyramid scales.

    Each input is harmonized to a common width by a 1x1 conv and resized to
    the finest grid, then passes an elementwise gate x * sigmoid(conv3x3(x)).
    The first two gated maps are summed, the third concatenated, and a final
    3x3 conv fuses the pair.
    """

    def __init__(self, channels_1, channels_2, channels_3, gate_channels):
        self.harmonize = [
            Conv2d(channels_1, gate_channels, 1),
            Conv2d(channels_2, gate_channels, 1),
            Conv2d(channels_3, gate_channels, 1),
        ]
        self.gates = [Conv2d(gate_channels, gate_channels, 3, padding=1) for _ in range(3)]
        self.fuse = Conv2d(2 * gate_channels, gate_channels, 3, padding=1)

    @staticmethod
    def _check_scales(h1, w1, h2, w2, h3, w3):
        if abs(h1 - 2 * h2) > 1 or abs(w1 - 2 * w2) > 1:
            raise ShapeError(f"L-Gate expects the second input at 1/2 scale: {h1}x{w1} vs {h2}x{w2}")
        if abs(h1 - 4 * h3) > 3 or abs(w1 - 4 * w3) > 3:
            raise ShapeError(f"L-Gate expects the third input at 1/4 scale: {h1}x{w1} vs {h3}x{w3}")

    def forward(self, x1, x2, x3, training=False):
        h1, w1 = x1.data.shape[2], x1.data.shape[3]
        self._check_scales(h1, w1, x2.data.shape[2], x2.data.shape[3],
                           x3.data.shape[2], x3.data.shape[3])
        gated = []
        for conv, gate, x in zip(self.harmonize, self.gates, (x1, x2, x3)):
            r = ops.bilinear_resize(conv(x), h1, w1)
            gated.append(ops.mul(r, ops.sigmoid(gate(r))))
        return self.fuse(ops.concat_channels(ops.add(gated[0], gated[1]), gated[2]))
