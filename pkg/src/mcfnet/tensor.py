"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous float32/float64 numpy array. Ops (see ops.py)
build the computation graph implicitly through parent links; ``backward``
walks it once in reverse topological order and accumulates gradients onto
requires_grad leaves. Tensors are treated as immutable values after
construction; in-place mutation of ``.data`` is reserved for the optimizer,
which only touches leaves outside any graph.
"""

import os

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class GraphError(RuntimeError):
    """Autodiff graph misuse (non-scalar loss, corrupt backward state)."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN/Inf while finite checking is enabled."""


_check_finite = os.environ.get("MCF_CHECK_FINITE", "0") == "1"


def set_check_finite(enabled):
    """Toggle per-op NaN/Inf validation (slow; meant for tests/debugging)."""
    global _check_finite
    _check_finite = bool(enabled)


def check_finite_enabled():
    return _check_finite


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff graph.

    ``grad`` is None until backward deposits something; None means zero.
    Feature maps follow the N x C x H x W convention.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self):
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, op={self._op})"


def from_op(data, parents, backward_fn, op):
    """Wrap an op result, linking it into the graph when any parent needs grad.

    ``backward_fn(g)`` must return one fresh gradient array per parent (None
    for parents that never need one); the engine never mutates them in place.
    """
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _topo_order(root):
    # iterative post-order; recursion depth is unbounded on deep nets
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate gradients of ``loss`` w.r.t. every requires_grad leaf.

    Leaf gradients accumulate across calls; intermediate gradients live only
    in this call's workspace, so repeated backward on the same graph is safe
    and exactly doubles leaf grads. Leaves the loss never touched keep
    ``grad=None`` (meaning zero).
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise GraphError(
                    f"op {node._op!r} returned gradient of shape {pg.shape} "
                    f"for parent of shape {p.data.shape}"
                )
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
