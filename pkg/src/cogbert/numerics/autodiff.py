"""Minimal reverse-mode autodiff over 2-D float64 arrays.

A forward pass builds a small graph of `Node`s; `backward` runs the tape in
reverse topological order and accumulates gradients into `Parameter.grad`.
Every backward rule here is hand-derived and covered by finite-difference
checks in the test suite (see gradcheck.grad_check).

Constant inputs (feature tokens, masks, dropout masks) enter the graph as
parameterless leaves; their gradients are computed but never consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from . import ops


@dataclass
class Parameter:
    """A named trainable tensor with its gradient accumulator.

    `decay` marks whether decoupled weight decay applies (True for weight
    matrices and embeddings, False for biases and layer-norm scales/shifts).
    """

    name: str
    value: np.ndarray
    decay: bool = True
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ShapeError(f"parameter {self.name!r} must be 2-D, got {self.value.shape}")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "bwd", "param")

    def __init__(self, value, parents=(), bwd=None, param: Parameter | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.param = param

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])


def _acc(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def leaf(param: Parameter) -> Node:
    return Node(param.value, param=param)


def const(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def backward(root: Node) -> None:
    """Seed root with ones, run the tape, push leaf grads into parameters."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        if node.bwd is not None:
            node.bwd(node.grad)
        if node.param is not None:
            node.param.grad += node.grad


# ---------------------------------------------------------------------------
# Differentiable ops
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    out = Node(a.value + b.value, (a, b))
    out.bwd = lambda g: (_acc(a, g), _acc(b, g))
    return out


def add_bias(x: Node, b: Node) -> Node:
    """x (n, d) + b (1, d), broadcasting the bias row over all rows."""
    if b.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"bias {b.value.shape} does not broadcast over {x.value.shape}")
    out = Node(x.value + b.value, (x, b))

    def bwd(g):
        _acc(x, g)
        _acc(b, g.sum(axis=0, keepdims=True))

    out.bwd = bwd
    return out


def add_const(x: Node, c: np.ndarray) -> Node:
    """Add a constant (broadcastable) array, e.g. an additive attention mask."""
    out = Node(x.value + c, (x,))
    out.bwd = lambda g: _acc(x, g)
    return out


def mul_const(x: Node, c: np.ndarray) -> Node:
    """Elementwise multiply by a constant (broadcastable) array."""
    out = Node(x.value * c, (x,))
    out.bwd = lambda g: _acc(x, g * c)
    return out


def scale(x: Node, s: float) -> Node:
    out = Node(x.value * s, (x,))
    out.bwd = lambda g: _acc(x, g * s)
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"cannot multiply {a.value.shape} by {b.value.shape}: inner dimensions differ")
    out = Node(a.value @ b.value, (a, b))

    def bwd(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    out.bwd = bwd
    return out


def linear(x: Node, w: Node, b: Node) -> Node:
    return add_bias(matmul(x, w), b)


def transpose(x: Node) -> Node:
    out = Node(x.value.T.copy(), (x,))
    out.bwd = lambda g: _acc(x, g.T)
    return out


def gelu(x: Node) -> Node:
    out = Node(ops.gelu(x.value), (x,))
    out.bwd = lambda g: _acc(x, g * ops.gelu_grad(x.value))
    return out


def softmax_rows(x: Node) -> Node:
    y = ops.softmax_rows(x.value)
    out = Node(y, (x,))

    def bwd(g):
        # dX = Y * (g - sum_j g_j Y_j) per row
        dot = (g * y).sum(axis=1, keepdims=True)
        _acc(x, y * (g - dot))

    out.bwd = bwd
    return out


def layer_norm_rows(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Row-wise layer norm; gamma and beta are (1, d) rows."""
    xv = x.value
    mean = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv_std
    out = Node(xhat * gamma.value + beta.value, (x, gamma, beta))

    def bwd(g):
        d = xv.shape[1]
        _acc(beta, g.sum(axis=0, keepdims=True))
        _acc(gamma, (g * xhat).sum(axis=0, keepdims=True))
        dxhat = g * gamma.value
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / d
        )
        _acc(x, dx)

    out.bwd = bwd
    return out


def gather_rows(table: Node, ids: np.ndarray) -> Node:
    """Select table rows by integer index (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.value.shape[0]:
        raise IndexError(
            f"row index out of range for table with {table.value.shape[0]} rows: "
            f"[{ids.min()}, {ids.max()}]"
        )
    out = Node(table.value[ids], (table,))

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, ids, g)

    out.bwd = bwd
    return out


def select_rows(x: Node, idx: np.ndarray) -> Node:
    """Pick a subset of rows (e.g. the CLS position of each sentence)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Node(x.value[idx], (x,))

    def bwd(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, idx, g)

    out.bwd = bwd
    return out


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"cannot concat {a.value.shape} with {b.value.shape}: row counts differ")
    na = a.value.shape[1]
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b))

    def bwd(g):
        _acc(a, g[:, :na])
        _acc(b, g[:, na:])

    out.bwd = bwd
    return out


def slice_cols(x: Node, c0: int, c1: int) -> Node:
    out = Node(x.value[:, c0:c1].copy(), (x,))

    def bwd(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad[:, c0:c1] += g

    out.bwd = bwd
    return out


def dropout(x: Node, rate: float, rng) -> Node:
    """Inverted dropout; identity when rate == 0. rng is a SeededRng."""
    if rate == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul_const(x, keep)


def sum_all(x: Node) -> Node:
    out = Node(np.array([[x.value.sum()]]), (x,))
    out.bwd = lambda g: _acc(x, np.full_like(x.value, g[0, 0]))
    return out


def mean_all(x: Node) -> Node:
    return scale(sum_all(x), 1.0 / x.value.size)


def multi_head_attention(
    q: Node, k: Node, v: Node, mask: np.ndarray, n_heads: int
) -> tuple[Node, np.ndarray]:
    """Scaled dot-product attention over a batch of stacked sentences.

    q, k, v are (batch*seq, d) with sentences stacked row-wise; mask is a
    (batch, seq) additive mask (0 or -10000) applied to every query row of
    its sentence. Returns the re-stacked context (batch*seq, d) and the
    detached per-head probabilities with shape (batch, n_heads, seq, seq).
    """
    n_batch, seq = mask.shape
    d = q.value.shape[1]
    if d % n_heads:
        raise ShapeError(f"model dim {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    inv_scale = 1.0 / math.sqrt(hd)

    def split(m: np.ndarray) -> np.ndarray:
        return m.reshape(n_batch, seq, n_heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.value), split(k.value), split(v.value)
    scores = qh @ kh.transpose(0, 1, 3, 2) * inv_scale + mask[:, None, None, :]
    shifted = scores - scores.max(axis=3, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=3, keepdims=True)
    ctx = probs @ vh
    out = Node(ctx.transpose(0, 2, 1, 3).reshape(n_batch * seq, d), (q, k, v))

    def bwd(g):
        dctx = g.reshape(n_batch, seq, n_heads, hd).transpose(0, 2, 1, 3)
        dprobs = dctx @ vh.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        dscores = (dprobs - (dprobs * probs).sum(axis=3, keepdims=True)) * probs
        dq = dscores @ kh * inv_scale
        dk = dscores.transpose(0, 1, 3, 2) @ qh * inv_scale

        def unsplit(m: np.ndarray) -> np.ndarray:
            return m.transpose(0, 2, 1, 3).reshape(n_batch * seq, d)

        _acc(q, unsplit(dq))
        _acc(k, unsplit(dk))
        _acc(v, unsplit(dv))

    out.bwd = bwd
    return out, probs


def cross_entropy_mean(logits: Node, labels: np.ndarray) -> Node:
    """Mean of -log softmax(logits_i)[labels_i] over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    lv = logits.value
    if labels.min() < 0 or labels.max() >= lv.shape[1]:
        raise IndexError(f"label out of range for {lv.shape[1]} classes")
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n = lv.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    out = Node(np.array([[loss]]), (logits,))

    def bwd(g):
        dl = np.exp(logp)
        dl[np.arange(n), labels] -= 1.0
        _acc(logits, dl * (g[0, 0] / n))

    out.bwd = bwd
    return out
