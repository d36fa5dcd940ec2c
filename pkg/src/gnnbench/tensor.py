"""Dense f64 tensors with a reverse-mode differentiation tape.

Every value is a float64 numpy array wrapped in a :class:`Tensor`. While a
training-mode :class:`Tape` is active, every op that touches a tracked tensor
(a parameter, or something derived from one) appends a node holding the
closure needed for its backward pass. ``Tape.backward`` walks the node list
once in reverse order and accumulates gradients into ``requires_grad`` leaves.

Running a forward pass with no active tape (or an inference-mode tape) records
nothing, which is how evaluation passes stay cheap and deterministic.
"""

from __future__ import annotations

import threading
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

from .errors import ContractError, DimensionError, ValidationError


class Tensor:
    """A float64 array plus the bookkeeping the tape needs.

    ``tape_id`` identifies the producing node on ``_tape``; both are None for
    leaves (parameters and constants).
    """

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # small operator sugar; the named functions below are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def parameter(data):
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("op", "inputs", "needs", "backward")

    def __init__(self, op, inputs, needs, backward):
        self.op = op
        self.inputs = inputs
        self.needs = needs
        self.backward = backward


# the active tape is thread-local so parallel runs never share state
_TLS = threading.local()


def _get_active():
    return getattr(_TLS, "active", None)


def _set_active(tape):
    _TLS.active = tape


class Tape:
    """Ordered record of recorded ops for one forward pass.

    ``training=False`` makes the tape inert (nothing records), which doubles
    as the switch consulted by mode-dependent ops such as batch norm.
    """

    def __init__(self, training=True):
        self.nodes = []
        self.training = training
        self._previous = None

    def __enter__(self):
        self._previous = _get_active()
        _set_active(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _set_active(self._previous)
        return False

    def backward(self, loss):
        """Populate gradients of every tracked leaf reachable from ``loss``.

        Repeated calls accumulate into ``.grad`` unless grads are zeroed.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError("backward requires a scalar loss tensor")
        if loss._tape is not self or loss.tape_id is None:
            raise ContractError("loss was not produced on this tape")
        flow = {loss.tape_id: np.ones_like(loss.data)}
        for idx in range(loss.tape_id, -1, -1):
            grad_out = flow.pop(idx, None)
            if grad_out is None:
                continue
            node = self.nodes[idx]
            for tensor_in, grad_in in zip(node.inputs, node.backward(grad_out, node.needs)):
                if grad_in is None:
                    continue
                if tensor_in.requires_grad:
                    tensor_in.grad = grad_in if tensor_in.grad is None else tensor_in.grad + grad_in
                if tensor_in._tape is self and tensor_in.tape_id is not None:
                    j = tensor_in.tape_id
                    flow[j] = grad_in if j not in flow else flow[j] + grad_in


class no_grad:
    """Context manager that hides any active tape."""

    def __enter__(self):
        self._previous = _get_active()
        _set_active(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _set_active(self._previous)
        return False


def active_tape():
    return _get_active()


def is_recording():
    tape = _get_active()
    return tape is not None and tape.training


def _tracked(*tensors):
    tape = _get_active()
    if tape is None or not tape.training:
        return False
    return any(t.requires_grad or t._tape is tape for t in tensors)


def apply_op(op, out_data, inputs, backward):
    """Wrap ``out_data`` in a Tensor, recording ``backward`` if anything tracks.

    ``backward(grad_out, needs)`` must return one gradient (or None) per input,
    in order. This is the extension point modules outside this file use to
    define ops with bespoke backward rules.
    """
    out = Tensor(out_data)
    if _tracked(*inputs):
        tape = _get_active()
        needs = tuple(t.requires_grad or t._tape is tape for t in inputs)
        out._tape = tape
        out.tape_id = len(tape.nodes)
        tape.nodes.append(_Node(op, inputs, needs, backward))
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Contraction of a's last axis with b's first; b must be 2-D.

    Covers plain matrix products and per-position feature maps on
    (n, n, d) tensors alike.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul got shapes {a.shape} and {b.shape}")
    out_data = np.tensordot(a.data, b.data, axes=1)

    def bw(g, needs):
        da = np.tensordot(g, b.data.T, axes=1) if needs[0] else None
        if needs[1]:
            k = a.shape[-1]
            db = a.data.reshape(-1, k).T @ g.reshape(-1, b.shape[1])
        else:
            db = None
        return da, db

    return apply_op("matmul", out_data, (a, b), bw)


def channelwise_matmul(a, b):
    """out[i, j, k] = sum_p a[i, p, k] * b[p, j, k]; one matmul per channel."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 3 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"channelwise_matmul got shapes {a.shape} and {b.shape}")
    out_data = np.einsum("ipk,pjk->ijk", a.data, b.data, optimize=True)

    def bw(g, needs):
        da = np.einsum("ijk,pjk->ipk", g, b.data, optimize=True) if needs[0] else None
        db = np.einsum("ipk,ijk->pjk", a.data, g, optimize=True) if needs[1] else None
        return da, db

    return apply_op("channelwise_matmul", out_data, (a, b), bw)


# ---------------------------------------------------------------------------
# elementwise suite


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add got shapes {a.shape} and {b.shape}") from exc

    def bw(g, needs):
        da = _unbroadcast(g, a.shape) if needs[0] else None
        db = _unbroadcast(g, b.shape) if needs[1] else None
        return da, db

    return apply_op("add", out_data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub got shapes {a.shape} and {b.shape}") from exc

    def bw(g, needs):
        da = _unbroadcast(g, a.shape) if needs[0] else None
        db = _unbroadcast(-g, b.shape) if needs[1] else None
        return da, db

    return apply_op("sub", out_data, (a, b), bw)


def mul(a, b):
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul got shapes {a.shape} and {b.shape}") from exc

    def bw(g, needs):
        da = _unbroadcast(g * b.data, a.shape) if needs[0] else None
        db = _unbroadcast(g * a.data, b.shape) if needs[1] else None
        return da, db

    return apply_op("mul", out_data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data / b.data
    except ValueError as exc:
        raise DimensionError(f"div got shapes {a.shape} and {b.shape}") from exc

    def bw(g, needs):
        da = _unbroadcast(g / b.data, a.shape) if needs[0] else None
        db = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None
        return da, db

    return apply_op("div", out_data, (a, b), bw)


def scalar_mul(x, c):
    x = as_tensor(x)
    c = float(c)

    def bw(g, needs):
        return (g * c,)

    return apply_op("scalar_mul", x.data * c, (x,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g, needs):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(p if need else None for p, need in zip(pieces, needs))

    return apply_op("concat", out_data, tuple(tensors), bw)


def relu(x):
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bw(g, needs):
        return (g * (x.data > 0.0),)

    return apply_op("relu", out_data, (x,), bw)


def leaky_relu(x, negative_slope=0.2):
    x = as_tensor(x)
    out_data = np.where(x.data > 0.0, x.data, negative_slope * x.data)

    def bw(g, needs):
        return (g * np.where(x.data > 0.0, 1.0, negative_slope),)

    return apply_op("leaky_relu", out_data, (x,), bw)


def elu(x, alpha=1.0):
    x = as_tensor(x)
    out_data = np.where(x.data > 0.0, x.data, alpha * np.expm1(x.data))

    def bw(g, needs):
        return (g * np.where(x.data > 0.0, 1.0, out_data + alpha),)

    return apply_op("elu", out_data, (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    # stable in both tails
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bw(g, needs):
        return (g * out_data * (1.0 - out_data),)

    return apply_op("sigmoid", out_data, (x,), bw)


def tanh(x):
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def bw(g, needs):
        return (g * (1.0 - out_data * out_data),)

    return apply_op("tanh", out_data, (x,), bw)


def exp(x):
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def bw(g, needs):
        return (g * out_data,)

    return apply_op("exp", out_data, (x,), bw)


def l2_normalize_rows(x, eps=1e-12):
    """Project each row onto the unit ball; rows with norm <= eps pass through
    scaled by 1/eps (exactly zero rows stay zero)."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows expects a matrix, got {x.shape}")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    safe = np.maximum(norms, eps)
    out_data = x.data / safe

    def bw(g, needs):
        # rows at the eps floor are a plain 1/eps scaling
        proj = (g * out_data).sum(axis=1, keepdims=True)
        dx = (g - out_data * proj) / safe
        floor = (norms <= eps)
        if floor.any():
            dx = np.where(floor, g / eps, dx)
        return (dx,)

    return apply_op("l2_normalize_rows", out_data, (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, x.ndim)

    def bw(g, needs):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return apply_op("sum", out_data, (x,), bw)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return scalar_mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(x, axis=None, keepdims=False):
    """Max over axes; ties share the gradient equally."""
    x = as_tensor(x)
    out_data = x.data.max(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, x.ndim)

    def bw(g, needs):
        gg, oo = g, out_data
        if not keepdims:
            gg = np.expand_dims(g, axes)
            oo = np.expand_dims(out_data, axes)
        mask = (x.data == oo)
        share = mask.sum(axis=axes, keepdims=True)
        return (np.broadcast_to(gg, x.shape) * mask / share,)

    return apply_op("max", out_data, (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def bw(g, needs):
        return (g.reshape(x.shape),)

    return apply_op("reshape", out_data, (x,), bw)


# ---------------------------------------------------------------------------
# scatter / gather


class ScatterIndex:
    """A frozen map from rows to segments with cached sparse operators.

    Built once per graph (or ad hoc from a raw id array) and reused by every
    gather/segment op that shares the same routing, so the CSR operators are
    constructed a single time.
    """

    def __init__(self, ids, n_segments):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise DimensionError("segment ids must be a 1-D array")
        n_segments = int(n_segments)
        if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
            raise IndexError(f"segment id out of range [0, {n_segments})")
        self.ids = ids
        self.n_segments = n_segments

    def __len__(self):
        return self.ids.size

    @cached_property
    def counts(self):
        return np.bincount(self.ids, minlength=self.n_segments)

    @cached_property
    def scatter(self):
        # (n_segments x E) indicator matrix; one SpMV does a segment sum
        n_rows = self.ids.size
        data = np.ones(n_rows)
        return sparse.csr_matrix(
            (data, (self.ids, np.arange(n_rows))), shape=(self.n_segments, n_rows)
        )

    @cached_property
    def scatter_mean(self):
        inv = 1.0 / np.maximum(self.counts, 1)
        n_rows = self.ids.size
        return sparse.csr_matrix(
            (inv[self.ids], (self.ids, np.arange(n_rows))), shape=(self.n_segments, n_rows)
        )

    @cached_property
    def order(self):
        return np.argsort(self.ids, kind="stable")

    @cached_property
    def _starts(self):
        # reduceat boundaries for the non-empty segments, in segment order
        nonempty = np.flatnonzero(self.counts)
        starts = np.concatenate([[0], np.cumsum(self.counts[nonempty])[:-1]])
        return nonempty, starts


def _as_index(index, n_segments):
    if isinstance(index, ScatterIndex):
        return index
    if n_segments is None:
        raise ValidationError("n_segments is required with a raw id array")
    return ScatterIndex(index, n_segments)


def gather_rows(x, index, n_rows=None):
    """out[e] = x[ids[e]]; backward scatter-adds into the gathered rows."""
    x = as_tensor(x)
    idx = _as_index(index, n_rows if n_rows is not None else x.shape[0])
    if idx.n_segments != x.shape[0]:
        raise DimensionError(
            f"gather index targets {idx.n_segments} rows, tensor has {x.shape[0]}"
        )
    out_data = x.data[idx.ids]

    def bw(g, needs):
        return (idx.scatter @ g,)

    return apply_op("gather_rows", out_data, (x,), bw)


def segment_reduce(values, index, n_segments=None, mode="sum"):
    """Per-segment sum/mean/max of rows. Empty segments produce zeros.

    Mean divides by the segment count; max routes gradient to the first
    occurrence of each segment's maximum.
    """
    values = as_tensor(values)
    if values.ndim != 2:
        raise DimensionError(f"segment_reduce expects E x d values, got {values.shape}")
    idx = _as_index(index, n_segments)
    if idx.ids.size != values.shape[0]:
        raise DimensionError(
            f"{values.shape[0]} rows vs {idx.ids.size} segment ids"
        )
    if mode not in ("sum", "mean", "max"):
        raise ValidationError(f"unknown segment_reduce mode {mode!r}")

    if mode in ("sum", "mean"):
        mat = idx.scatter if mode == "sum" else idx.scatter_mean
        out_data = mat @ values.data if idx.ids.size else np.zeros(
            (idx.n_segments, values.shape[1])
        )

        def bw(g, needs):
            return (mat.T @ g,)

        return apply_op(f"segment_{mode}", out_data, (values,), bw)

    # max: reduce over sorted rows, zeros for empty segments
    n_seg, d = idx.n_segments, values.shape[1]
    out_data = np.zeros((n_seg, d))
    if idx.ids.size:
        nonempty, starts = idx._starts
        out_data[nonempty] = np.maximum.reduceat(values.data[idx.order], starts, axis=0)

    def bw(g, needs):
        gv = np.zeros_like(values.data)
        if idx.ids.size:
            n_rows = idx.ids.size
            # first row index attaining each (segment, column) max
            winner = np.full((n_seg, d), n_rows, dtype=np.int64)
            candidate = np.where(
                values.data == out_data[idx.ids],
                np.arange(n_rows, dtype=np.int64)[:, None],
                n_rows,
            )
            np.minimum.at(winner, idx.ids, candidate)
            seg_rows, cols = np.nonzero(winner < n_rows)
            gv[winner[seg_rows, cols], cols] = g[seg_rows, cols]
        return (gv,)

    return apply_op("segment_max", out_data, (values,), bw)


def segment_softmax(scores, index, n_segments=None):
    """Softmax within each segment, independently per column.

    Accepts (E,) or (E, K) scores; each non-empty segment's entries sum to 1.
    """
    scores = as_tensor(scores)
    squeeze = scores.ndim == 1
    data = scores.data[:, None] if squeeze else scores.data
    if data.ndim != 2:
        raise DimensionError(f"segment_softmax expects 1-D or 2-D scores, got {scores.shape}")
    idx = _as_index(index, n_segments)
    if idx.ids.size != data.shape[0]:
        raise DimensionError(f"{data.shape[0]} scores vs {idx.ids.size} segment ids")

    if idx.ids.size == 0:
        out_data = data.copy()
    else:
        nonempty, starts = idx._starts
        seg_max = np.zeros((idx.n_segments, data.shape[1]))
        seg_max[nonempty] = np.maximum.reduceat(data[idx.order], starts, axis=0)
        shifted = np.exp(data - seg_max[idx.ids])
        denom = idx.scatter @ shifted
        out_data = shifted / denom[idx.ids]
    if squeeze:
        out_data = out_data[:, 0]

    def bw(g, needs):
        gg = g[:, None] if squeeze else g
        oo = out_data[:, None] if squeeze else out_data
        inner = idx.scatter @ (oo * gg)
        gs = oo * (gg - inner[idx.ids])
        return (gs[:, 0] if squeeze else gs,)

    return apply_op("segment_softmax", out_data, (scores,), bw)
