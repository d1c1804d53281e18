"""Multiply-accumulate accounting for forward passes.

Ops report their MAC cost to the active counter (if any). Conventions,
mirrored by the independent tally in the test suite:

- conv2d: N * C_out * H_out * W_out * C_in * k * k   (bias adds are free)
- batch norm: one MAC per element (scale + shift)
- bilinear resize: 4 MACs per output element
- elementwise add / mul: one MAC per output element
- global average pool: one MAC per input element
- channel covariance: one MAC per input element (centered product-accumulate)
- relu / sigmoid / concat / slicing: free
"""

from contextlib import contextmanager

_active = None


class MacCounter:
    def __init__(self):
        self.total = 0
        self.by_op = {}

    def add(self, op, n):
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


@contextmanager
def counting_macs():
    """Activate a fresh MacCounter for the duration of the block."""
    global _active
    prev = _active
    counter = MacCounter()
    _active = counter
    try:
        yield counter
    finally:
        _active = prev


def add_macs(op, n):
    if _active is not None:
        _active.add(op, int(n))
