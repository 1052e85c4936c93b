"""Dense float64 tensors and a minimal define-by-run reverse-mode engine.

Values are plain numpy float64 arrays; the graph is a DAG of :class:`Node`
objects built fresh on every forward pass. Each op attaches a backward
closure that accumulates gradients into its parents' ``grad`` buffers.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    NumericError,
    ParameterError,
    PermutationError,
)


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (copies only when needed)."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


class Node:
    """A vertex of the computation graph.

    Carries the forward value, a zero-initialized gradient buffer of the
    same shape, the tag of the op that produced it, and its parent nodes.
    Nodes are write-once apart from ``grad``; ops never mutate their
    inputs' value arrays.
    """

    __slots__ = ("value", "grad", "op_tag", "parents", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op_tag="leaf", requires_grad=False,
                 backward=None):
        self.value = as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.op_tag = op_tag
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return (f"Node({self.op_tag}, shape={self.value.shape}, "
                f"requires_grad={self.requires_grad})")

    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, requires_grad=False) -> Node:
    """Create a graph input holding ``value``."""
    return Node(value, op_tag="leaf", requires_grad=requires_grad)


def constant(value) -> Node:
    """A leaf that never receives gradients."""
    return leaf(value, requires_grad=False)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast an operand along."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a: Node, b: Node, value, tag, da, db) -> Node:
    out = Node(value, parents=(a, b), op_tag=tag,
               requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(da(g), a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(db(g), b.value.shape)

    out._backward = backward
    return out


def add(a: Node, b: Node) -> Node:
    """Elementwise sum with numpy broadcasting."""
    return _binary(a, b, a.value + b.value, "add", lambda g: g, lambda g: g)


def sub(a: Node, b: Node) -> Node:
    """Elementwise difference with numpy broadcasting."""
    return _binary(a, b, a.value - b.value, "sub", lambda g: g, lambda g: -g)


def mul(a: Node, b: Node) -> Node:
    """Elementwise product with numpy broadcasting."""
    return _binary(a, b, a.value * b.value, "mul",
                   lambda g: g * b.value, lambda g: g * a.value)


def square(a: Node) -> Node:
    """Elementwise x**2."""
    out = Node(a.value * a.value, parents=(a,), op_tag="square",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += 2.0 * a.value * g

    out._backward = backward
    return out


def scale(a: Node, c: float) -> Node:
    """Multiply by a python float constant."""
    c = float(c)
    out = Node(a.value * c, parents=(a,), op_tag="scale",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += c * g

    out._backward = backward
    return out


def sum_all(a: Node) -> Node:
    """Sum every entry into a scalar (shape ()) node."""
    out = Node(a.value.sum(), parents=(a,), op_tag="sum",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += g  # g is 0-d; broadcasts over the full buffer

    out._backward = backward
    return out


def reshape(a: Node, shape) -> Node:
    """View the same entries under a new shape."""
    out = Node(a.value.reshape(shape), parents=(a,), op_tag="reshape",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += g.reshape(a.value.shape)

    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    """Matrix product of two 2-D nodes."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul expects (m,k)@(k,n), got {a.value.shape} @ {b.value.shape}")
    out = Node(a.value @ b.value, parents=(a, b), op_tag="matmul",
               requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g

    out._backward = backward
    return out


def relu(a: Node) -> Node:
    """Elementwise max(0, x); at exactly 0 the subgradient 0 is used."""
    mask = a.value > 0
    out = Node(np.where(mask, a.value, 0.0), parents=(a,), op_tag="relu",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += np.where(mask, g, 0.0)

    out._backward = backward
    return out


def gather_rows(a: Node, perm: Sequence[int]) -> Node:
    """Reorder rows so output row i is input row perm[i].

    ``perm`` must be a bijection on 0..n-1; gradients scatter back through
    the inverse permutation.
    """
    idx = np.asarray(perm, dtype=np.intp)
    n = a.value.shape[0]
    if idx.ndim != 1 or idx.shape[0] != n or np.any(idx < 0) or np.any(idx >= n) \
            or np.any(np.bincount(idx, minlength=n) != 1):
        raise PermutationError(f"index list is not a permutation of 0..{n - 1}")
    out = Node(a.value[idx], parents=(a,), op_tag="gather_rows",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad[idx] += g

    out._backward = backward
    return out


def adjacent_diff(a: Node) -> Node:
    """First differences of a 1-D node: out[i] = a[i+1] - a[i]."""
    if a.value.ndim != 1:
        raise DimensionError(f"adjacent_diff expects a vector, got {a.value.shape}")
    out = Node(np.diff(a.value), parents=(a,), op_tag="adjacent_diff",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad[1:] += g
            a.grad[:-1] -= g

    out._backward = backward
    return out


def conv1d_same(x: Node, kernels: Node, bias: Node) -> Node:
    """Width-3 cross-correlation over (batch, length, in_ch) with zero 'same'
    padding, producing (batch, length, out_ch)."""
    if x.value.ndim != 3:
        raise DimensionError(f"conv1d_same input must be 3-D, got {x.value.shape}")
    if kernels.value.ndim != 3 or kernels.value.shape[2] != 3:
        raise DimensionError(
            f"kernels must be (out_ch, in_ch, 3), got {kernels.value.shape}")
    batch, length, in_ch = x.value.shape
    out_ch, k_in, _ = kernels.value.shape
    if k_in != in_ch:
        raise DimensionError(
            f"channel mismatch: input {x.value.shape} vs kernels {kernels.value.shape}")
    if bias.value.shape != (out_ch,):
        raise DimensionError(
            f"bias must have shape ({out_ch},), got {bias.value.shape}")

    padded = np.zeros((batch, length + 2, in_ch))
    padded[:, 1:-1, :] = x.value
    value = np.broadcast_to(bias.value, (batch, length, out_ch)).copy()
    for k in range(3):
        value += padded[:, k:k + length, :] @ kernels.value[:, :, k].T

    out = Node(value, parents=(x, kernels, bias), op_tag="conv1d_same",
               requires_grad=(x.requires_grad or kernels.requires_grad
                              or bias.requires_grad))

    def backward(g):
        if bias.requires_grad:
            bias.grad += g.sum(axis=(0, 1))
        if kernels.requires_grad:
            for k in range(3):
                kernels.grad[:, :, k] += np.einsum(
                    "blo,blc->oc", g, padded[:, k:k + length, :])
        if x.requires_grad:
            g_padded = np.zeros_like(padded)
            for k in range(3):
                g_padded[:, k:k + length, :] += g @ kernels.value[:, :, k]
            x.grad += g_padded[:, 1:-1, :]

    out._backward = backward
    return out


def global_avg_pool(x: Node) -> Node:
    """Mean over the length axis of (batch, length, ch) -> (batch, ch)."""
    if x.value.ndim != 3:
        raise DimensionError(f"global_avg_pool input must be 3-D, got {x.value.shape}")
    length = x.value.shape[1]
    if length < 1:
        raise DimensionError("global_avg_pool needs length >= 1")
    out = Node(x.value.mean(axis=1), parents=(x,), op_tag="global_avg_pool",
               requires_grad=x.requires_grad)

    def backward(g):
        if x.requires_grad:
            x.grad += g[:, None, :] / length

    out._backward = backward
    return out


def dropout(a: Node, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    survivors by 1/(1-rate) in training mode; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ParameterError("training-mode dropout needs a seeded generator")
    keep = rng.random(a.value.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    mask = np.where(keep, factor, 0.0)
    out = Node(a.value * mask, parents=(a,), op_tag="dropout",
               requires_grad=a.requires_grad)

    def backward(g):
        if a.requires_grad:
            a.grad += g * mask

    out._backward = backward
    return out


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents always precede children


def backward_pass(root: Node) -> None:
    """Reverse-accumulate gradients from a scalar root through the graph.

    Gradients sum across multiple uses of a node. The root's own grad is
    seeded with 1.
    """
    if root.value.size != 1:
        raise ContractError(
            f"backward_pass needs a scalar root, got shape {root.value.shape}")
    order = _topo_order(root)
    root.grad += np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward(node.grad)


def zero_grads(nodes) -> None:
    """Reset the grad buffers of the given nodes in place."""
    for node in nodes:
        node.grad[...] = 0.0


def gradient_check(loss_fn: Callable[[Node], Node], point, step: float) -> float:
    """Compare the engine's gradient against central finite differences.

    ``loss_fn`` must be a pure function mapping a leaf node (same shape as
    ``point``) to a scalar node. Returns
    max_i |g_a,i - g_fd,i| / max(1e-8, |g_a,i| + |g_fd,i|).
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    base = as_tensor(point)
    p = leaf(base, requires_grad=True)
    backward_pass(loss_fn(p))
    g_analytic = p.grad.ravel().copy()

    flat = base.ravel().copy()
    g_fd = np.empty_like(flat)
    for i in range(flat.size):
        vals = []
        for sign in (1.0, -1.0):
            bumped = flat.copy()
            bumped[i] += sign * step
            out = loss_fn(leaf(bumped.reshape(base.shape))).value.item()
            if not np.isfinite(out):
                raise NumericError(f"non-finite loss at perturbed coordinate {i}")
            vals.append(out)
        g_fd[i] = (vals[0] - vals[1]) / (2.0 * step)

    denom = np.maximum(1e-8, np.abs(g_analytic) + np.abs(g_fd))
    return float(np.max(np.abs(g_analytic - g_fd) / denom))
