"""Dense rank-2 tensor layers operating on whole graphs at once.

State is an n x n x d tensor per graph (adjacency, node features on the
diagonal, edge features at arc cells; see graphs.to_dense_tensor). Two layer
families build on it: one through a 17-map order-2 equivariant linear basis
with two scalar-weighted branches, one through channelwise 2-layer MLPs and
a matrix-product mixing step.

The 15 linear basis maps are fixed in a documented canonical order below.
Their correctness is gated on property tests (permutation equivariance of
every map, operator rank 15 at n >= 4) rather than on the enumeration
itself; any ordering with those properties spans the same space.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Module, uniform_init
from .tensor import apply_op, parameter

# canonical order of the 15 linear maps; each acts on X (n x n), vectorized
# over a trailing channel axis. D(X) is the diagonal vector, J the all-ones
# matrix. rowsum[i] = sum_k X[i,k], colsum[j] = sum_k X[k,j].
#  0 identity                      out[i,j] = X[i,j]
#  1 transpose                     out[i,j] = X[j,i]
#  2 diagonal kept on diagonal     out[i,i] = X[i,i], 0 elsewhere
#  3 diagonal broadcast to rows    out[i,j] = X[i,i]
#  4 diagonal broadcast to cols    out[i,j] = X[j,j]
#  5 row sums broadcast to rows    out[i,j] = rowsum[i]
#  6 row sums broadcast to cols    out[i,j] = rowsum[j]
#  7 col sums broadcast to rows    out[i,j] = colsum[i]
#  8 col sums broadcast to cols    out[i,j] = colsum[j]
#  9 row sums on diagonal          out[i,i] = rowsum[i]
# 10 col sums on diagonal          out[i,i] = colsum[i]
# 11 total sum everywhere          out[i,j] = sum(X)
# 12 total sum on diagonal         out[i,i] = sum(X)
# 13 trace everywhere              out[i,j] = tr(X)
# 14 trace on diagonal             out[i,i] = tr(X)
# bias maps (input-independent):
# 15 all-ones                      out = J
# 16 identity pattern              out = I

N_BASIS = 17
N_LINEAR = 15

# the adjoint of every linear map is another map in the table
_ADJOINT = (0, 1, 2, 9, 10, 5, 7, 6, 8, 3, 4, 11, 13, 12, 14)


def _diag_embed(v):
    """(n, c) channel-wise vectors -> (n, n, c) diagonal matrices."""
    n, c = v.shape
    out = np.zeros((n, n, c))
    idx = np.arange(n)
    out[idx, idx, :] = v
    return out


def _apply_one(p, x):
    """Linear basis map ``p`` applied to x: (n, n, c) -> (n, n, c)."""
    n = x.shape[0]
    if p == 0:
        return x.copy()
    if p == 1:
        return x.transpose(1, 0, 2).copy()
    diag = x[np.arange(n), np.arange(n), :]
    if p == 2:
        return _diag_embed(diag)
    if p == 3:
        return np.broadcast_to(diag[:, None, :], x.shape).copy()
    if p == 4:
        return np.broadcast_to(diag[None, :, :], x.shape).copy()
    rowsum = x.sum(axis=1)
    colsum = x.sum(axis=0)
    if p == 5:
        return np.broadcast_to(rowsum[:, None, :], x.shape).copy()
    if p == 6:
        return np.broadcast_to(rowsum[None, :, :], x.shape).copy()
    if p == 7:
        return np.broadcast_to(colsum[:, None, :], x.shape).copy()
    if p == 8:
        return np.broadcast_to(colsum[None, :, :], x.shape).copy()
    if p == 9:
        return _diag_embed(rowsum)
    if p == 10:
        return _diag_embed(colsum)
    total = x.sum(axis=(0, 1))
    if p == 11:
        return np.broadcast_to(total[None, None, :], x.shape).copy()
    if p == 12:
        return _diag_embed(np.broadcast_to(total[None, :], (n, x.shape[2])))
    trace = diag.sum(axis=0)
    if p == 13:
        return np.broadcast_to(trace[None, None, :], x.shape).copy()
    if p == 14:
        return _diag_embed(np.broadcast_to(trace[None, :], (n, x.shape[2])))
    raise ValueError(f"no linear basis map {p}")


def _basis_stack(x):
    """(n, n, c) -> (17, n, n, c): the 15 maps plus the two bias patterns."""
    n, _, c = x.shape
    stack = np.empty((N_BASIS, n, n, c))
    for p in range(N_LINEAR):
        stack[p] = _apply_one(p, x)
    stack[15] = np.ones((n, n, 1))
    stack[16] = np.eye(n)[:, :, None]
    return stack


def apply_basis(mat):
    """All 17 basis maps of a single n x n matrix, stacked as (17, n, n)."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"basis maps need a square matrix, got {mat.shape}")
    return _basis_stack(mat[:, :, None])[:, :, :, 0]


def equivariant_linear(h, w):
    """out[:,:,k] = sum_p sum_q w[q,k,p] * basis_p(h[:,:,q]).

    h: (n, n, d_in) tensor, w: (d_in, d_out, 17). The two bias maps are
    input-independent, so their contribution is sum_q w[q,k,p] times the
    fixed pattern.
    """
    h = T.as_tensor(h)
    w = T.as_tensor(w)
    if h.ndim != 3 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"equivariant input must be (n, n, d), got {h.shape}")
    if w.ndim != 3 or w.shape[2] != N_BASIS or w.shape[0] != h.shape[2]:
        raise DimensionError(
            f"weights must be (d_in, d_out, {N_BASIS}) with d_in={h.shape[2]}, got {w.shape}"
        )
    stack = _basis_stack(h.data)
    out = np.einsum("pijq,qkp->ijk", stack, w.data)

    def bw(g, needs):
        dh = None
        if needs[0]:
            per_map = np.einsum("ijk,qkp->pijq", g, w.data)
            dh = np.zeros(h.shape)
            for p in range(N_LINEAR):
                dh += _apply_one(_ADJOINT[p], per_map[p])
        dw = np.einsum("pijq,ijk->qkp", stack, g) if needs[1] else None
        return dh, dw

    return apply_op("equivariant_linear", out, (h, w), bw)


class RingGNNLayer(Module):
    """sigma(w1 * L1(h) + w2 * L2(h) @ L3(h)), with channelwise matmul and
    ReLU; the three L maps are independent equivariant linear layers."""

    def __init__(self, d_in, d_out, rng):
        fan = N_BASIS * d_in
        self.w_lin = parameter(uniform_init(rng, fan, (d_in, d_out, N_BASIS)))
        self.w_left = parameter(uniform_init(rng, fan, (d_in, d_out, N_BASIS)))
        self.w_right = parameter(uniform_init(rng, fan, (d_in, d_out, N_BASIS)))
        self.scale_lin = parameter(np.ones(()))
        self.scale_prod = parameter(np.ones(()))

    def __call__(self, h):
        lin = T.mul(equivariant_linear(h, self.w_lin), self.scale_lin)
        prod = T.channelwise_matmul(
            equivariant_linear(h, self.w_left),
            equivariant_linear(h, self.w_right),
        )
        return T.relu(T.add(lin, T.mul(prod, self.scale_prod)))


class ThreeWLLayer(Module):
    """concat(M1(h) @ M2(h), M3(h)) over channels, where each M is a
    biasless 2-layer channel MLP sigma(h Wa) Wb and @ is channelwise."""

    def __init__(self, d_in, d_block, rng, d_hidden=None):
        d_hidden = d_hidden or d_block
        self.d_out = 2 * d_block
        self.blocks = [
            (
                parameter(uniform_init(rng, d_in, (d_in, d_hidden))),
                parameter(uniform_init(rng, d_hidden, (d_hidden, d_block))),
            )
            for _ in range(3)
        ]

    def _mlp(self, h, block):
        wa, wb = block
        return T.matmul(T.relu(T.matmul(h, wa)), wb)

    def __call__(self, h):
        m1 = self._mlp(h, self.blocks[0])
        m2 = self._mlp(h, self.blocks[1])
        m3 = self._mlp(h, self.blocks[2])
        return T.concat([T.channelwise_matmul(m1, m2), m3], axis=2)
