"""Dense float64 tensors with tape-based reverse-mode differentiation.

Design: define-by-run. Every differentiable op appends one node to an ambient
thread-local tape; the tape's append order is a topological order of the
graph, so :func:`backward` is a single reverse sweep that visits each node
once and accumulates gradients additively (the accumulation is what carries
cross-depth weight sharing). The tape is consumed by ``backward`` and rebuilt
by the next forward pass.

Broadcasting is deliberately restricted: scalar ops, ``add_bias`` over the
last axis, and ``scale_rows`` over the first axis are the only shape-bending
primitives, each with a hand-written backward rule.
"""

from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError, ValidationError
from . import kernels

DEBUG_CHECK_FINITE = os.environ.get("MODREASON_DEBUG", "") not in ("", "0")

_MASK_NEG = -1e30  # finite stand-in for -inf so masked softmax stays NaN-free


class Tensor:
    """A dense float64 array plus gradient metadata.

    ``data`` is always C-contiguous (row-major flat storage with shape
    metadata). ``grad`` is populated by :func:`backward` for every tensor
    with ``requires_grad`` reachable from the loss, and is None otherwise.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Thin operator sugar over the module-level ops.
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_scalar(other, -1.0))
        return add_scalar(self, -float(other))

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class _Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class ComputationTape:
    """Ordered op records; append order is topological by construction."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []


_tls = threading.local()


def _tape() -> ComputationTape:
    tape = getattr(_tls, "tape", None)
    if tape is None:
        tape = ComputationTape()
        _tls.tape = tape
    return tape


def reset_tape():
    _tls.tape = ComputationTape()


def tape_size() -> int:
    return len(_tape().nodes)


class no_grad:
    """Context manager disabling tape recording (inference / finite diffs)."""

    def __enter__(self):
        _tls.depth = getattr(_tls, "depth", 0) + 1
        return self

    def __exit__(self, *exc):
        _tls.depth -= 1
        return False


def _recording() -> bool:
    return getattr(_tls, "depth", 0) == 0


def _make(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          backward: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap op output, recording a tape node when gradients are live."""
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values in output of {op}")
    out = Tensor(out_data)
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape().nodes.append(_Node(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor):
    """Populate ``grad`` for every requires_grad tensor reachable from loss.

    Consumes the ambient tape: one reverse sweep, each node visited once.
    Gradients accumulate additively across multiple uses of a tensor.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _tape()
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            g = node.out.grad
            if g is None:
                continue  # not on a path to the loss
            for t, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not t.requires_grad:
                    continue
                # accumulate out-of-place: backward outputs may alias their
                # upstream gradient, so never mutate a stored grad in place
                t.grad = ig if t.grad is None else t.grad + ig
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    return _make("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make("add_scalar", (a,), a.data + c, lambda g: (g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ: {a.shape} vs {b.shape}")
    return _make("mul", (a, b), a.data * b.data,
                 lambda g: (g * b.data, g * a.data))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _make("mul_scalar", (a,), a.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., d] + b[d]; the one sanctioned broadcast besides scalars."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def bwd(g):
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)

    return _make("add_bias", (x, b), x.data + b.data, bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale each slice x[i] by the scalar s[i]; s has shape (x.shape[0],)."""
    if s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: scale {s.shape} does not match first axis of {x.shape}")
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    sview = s.data[expand]

    def bwd(g):
        axes = tuple(range(1, x.ndim))
        return g * sview, (g * x.data).sum(axis=axes)

    return _make("scale_rows", (x, s), x.data * sview, bwd)


def add_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable constant (numpy broadcasting allowed here,
    since backward is the identity on x)."""
    out = x.data + c
    if out.shape != x.shape:
        raise ShapeError(f"add_const: constant {np.shape(c)} broadcasts {x.shape} "
                         f"to {out.shape}")
    return _make("add_const", (x,), out, lambda g: (g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _make("relu", (x,), np.where(mask, x.data, 0.0), bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = x.shape
    return _make("reshape", (x,), x.data.reshape(shape),
                 lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                 lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2D@2D, ND@2D (shared weights), or ND@ND (same batch)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2D: {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    if a.ndim == b.ndim:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: batch dimensions disagree: {a.shape} x {b.shape}")

        def bwd(g):
            ga = g @ b.data.swapaxes(-1, -2) if a.requires_grad else None
            gb = a.data.swapaxes(-1, -2) @ g if b.requires_grad else None
            return ga, gb

    elif b.ndim == 2:
        k, n = b.shape

        def bwd(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = (a.data.reshape(-1, k).T @ g.reshape(-1, n)) if b.requires_grad else None
            return ga, gb

    else:
        raise ShapeError(f"matmul: unsupported rank combination: {a.shape} x {b.shape}")
    return _make("matmul", (a, b), a.data @ b.data, bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make("sum", (x,), np.asarray(x.data.sum()),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make("mean", (x,), np.asarray(x.data.mean()),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


# ---------------------------------------------------------------------------
# normalizations and losses


def _to_rows(data: np.ndarray, axis: int) -> tuple[np.ndarray, tuple, int]:
    """View ``data`` as 2D rows over ``axis`` (moved last); returns inverse info."""
    nd = data.ndim
    axis = axis % nd
    if axis != nd - 1:
        data = np.ascontiguousarray(np.moveaxis(data, axis, -1))
    shape = data.shape
    return data.reshape(-1, shape[-1]), shape, axis


def _from_rows(rows: np.ndarray, shape: tuple, axis: int, nd: int) -> np.ndarray:
    out = rows.reshape(shape)
    if axis != nd - 1:
        out = np.ascontiguousarray(np.moveaxis(out, -1, axis))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; rows sum to 1 for any finite input."""
    rows, shape, ax = _to_rows(x.data, axis)
    y_rows = kernels.softmax_fwd(rows)
    y = _from_rows(y_rows, shape, ax, x.ndim)

    def bwd(g):
        g_rows, _, _ = _to_rows(g, ax if ax != x.ndim - 1 else -1)
        dx = kernels.softmax_bwd(y_rows, np.ascontiguousarray(g_rows))
        return (_from_rows(dx, shape, ax, x.ndim),)

    return _make("softmax", (x,), y, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    rows, shape, ax = _to_rows(x.data, axis)
    m = rows.max(axis=1, keepdims=True)
    shifted = rows - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ls_rows = shifted - lse
    p_rows = np.exp(ls_rows)

    def bwd(g):
        g_rows, _, _ = _to_rows(g, ax if ax != x.ndim - 1 else -1)
        g_rows = np.ascontiguousarray(g_rows)
        dx = g_rows - p_rows * g_rows.sum(axis=1, keepdims=True)
        return (_from_rows(dx, shape, ax, x.ndim),)

    return _make("log_softmax", (x,), _from_rows(ls_rows, shape, ax, x.ndim), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-position zero-mean/unit-variance over the last axis, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match last axis of {x.shape}")
    rows = x.data.reshape(-1, d)
    y_rows, xhat, rstd = kernels.layernorm_fwd(rows, gamma.data, beta.data, eps)

    def bwd(g):
        g_rows = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgamma, dbeta = kernels.layernorm_bwd(g_rows, xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dgamma, dbeta

    return _make("layer_norm", (x, gamma, beta), y_rows.reshape(x.shape), bwd)


def cross_entropy(logits: Tensor, target: Tensor) -> Tensor:
    """Mean over rows of -sum(target * log softmax(logits)).

    target rows are soft distributions and must each sum to 1 (tol 1e-6).
    """
    if logits.ndim != 2 or logits.shape != target.shape:
        raise ShapeError(f"cross_entropy: expected matching 2D shapes, "
                         f"got {logits.shape} vs {target.shape}")
    row_sums = target.data.sum(axis=1)
    bad = np.abs(row_sums - 1.0) > 1e-6
    if bad.any():
        raise ValidationError(
            f"cross_entropy: target row {int(np.argmax(bad))} sums to "
            f"{row_sums[np.argmax(bad)]:.8f}, expected 1")
    n = logits.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ls = shifted - lse
    loss = -(target.data * ls).sum() / n
    p = np.exp(ls)

    def bwd(g):
        scale = float(g) / n
        glog = (p - target.data) * scale if logits.requires_grad else None
        gtar = (-ls) * scale if target.requires_grad else None
        return glog, gtar

    return _make("cross_entropy", (logits, target), np.asarray(loss), bwd)


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Mean elementwise binary cross-entropy on logits (stable form)."""
    if logits.shape != target.shape:
        raise ShapeError(f"bce_with_logits: shapes differ: {logits.shape} vs {target.shape}")
    z, y = logits.data, target.data
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = logits.size
    sig = 1.0 / (1.0 + np.exp(-z))

    def bwd(g):
        scale = float(g) / n
        return ((sig - y) * scale, None)

    return _make("bce_with_logits", (logits, target), np.asarray(loss.sum() / n), bwd)


# ---------------------------------------------------------------------------
# gather / scatter


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up rows of ``table`` by integer ids (any id array shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    d = table.shape[-1]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, d))
        return (gt,)

    return _make("embedding", (table,), table.data[ids], bwd)


def index_rows(x: Tensor, idx: np.ndarray, unique: bool = False) -> Tensor:
    """Gather slices along axis 0; backward scatter-adds.

    unique=True promises no repeated indices, enabling the fast assignment
    path in backward.
    """
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        if unique:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make("index_rows", (x,), x.data[idx].copy(), bwd)


def scatter_rows(x: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Place x[j] at output row idx[j] of a zero tensor; idx must be unique."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_rows,) + x.shape[1:], dtype=np.float64)
    out[idx] = x.data

    def bwd(g):
        return (g[idx],)

    return _make("scatter_rows", (x,), out, bwd)


def take_position(x: Tensor, pos: int) -> Tensor:
    """x[:, pos, :] for a (B, T, d) tensor; used for [CLS] pooling."""
    if x.ndim != 3:
        raise ShapeError(f"take_position: expected 3D input, got {x.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, pos, :] = g
        return (gx,)

    return _make("take_position", (x,), x.data[:, pos, :].copy(), bwd)


def apply_attention_mask(scores: Tensor, key_mask: np.ndarray | None = None,
                         causal: bool = False) -> Tensor:
    """Add -1e30 to masked score entries; backward is the identity.

    scores: (B, H, Tq, Tk). key_mask: (B, Tk) with 1 = real, 0 = padding.
    """
    bias = np.zeros(scores.shape[-2:], dtype=np.float64)
    if causal:
        tq, tk = scores.shape[-2:]
        bias = bias + np.triu(np.full((tq, tk), _MASK_NEG), k=1)
    out = scores.data + bias
    if key_mask is not None:
        out = out + ((1.0 - key_mask[:, None, None, :]) * _MASK_NEG)
    return _make("attention_mask", (scores,), out, lambda g: (g,))
