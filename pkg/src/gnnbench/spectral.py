"""Normalized graph Laplacian, a cyclic-Jacobi eigensolver, and positional
encodings derived from it.

The eigensolver is self-contained (no LAPACK) so its convergence and ordering
behavior are fully pinned: ascending eigenvalues, sign-canonical eigenvector
columns, deterministic output for a given input. Eigendecompositions are
cached on the graph, so repeated positional-encoding calls (e.g. fresh sign
flips every batch) pay the O(n^3) cost once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

MAX_SWEEPS = 100
ZERO_EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class LaplacianEig:
    """Full spectrum: ascending eigenvalues, orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class PESpec:
    """Positional-encoding settings.

    kind "laplacian" uses eigenvectors of the normalized Laplacian with
    sign_mode one of random_flip / fixed / absolute; kind "index" one-hot
    encodes a node ordering, order_mode fixed or random.
    """

    kind: str
    k: int
    sign_mode: str = "random_flip"
    order_mode: str = "fixed"

    def __post_init__(self):
        if self.kind not in ("laplacian", "index"):
            raise ValidationError(f"unknown pe kind {self.kind!r}")
        if self.k < 1:
            raise ValidationError("pe dimension k must be >= 1")
        if self.sign_mode not in ("random_flip", "fixed", "absolute"):
            raise ValidationError(f"unknown sign_mode {self.sign_mode!r}")
        if self.order_mode not in ("fixed", "random"):
            raise ValidationError(f"unknown order_mode {self.order_mode!r}")


def normalized_laplacian(g):
    """I - D^{-1/2} A D^{-1/2} over the symmetrized adjacency.

    A is the elementwise max of the two arc indicators, degrees are clamped
    to >= 1 so isolated nodes contribute an identity row.
    """
    a = np.zeros((g.n, g.n))
    a[g.src, g.dst] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0.0)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(a.sum(axis=1), 1.0))
    scaled = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return np.eye(g.n) - scaled


def _round_robin(m):
    """All-pairs schedule: m-1 rounds of m/2 disjoint pairs (m even)."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        rounds.append([(players[i], players[m - 1 - i]) for i in range(m // 2)])
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def symmetric_eig(mat):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Each sweep applies one round-robin pass of Givens rotations; disjoint
    pairs within a round commute, so every round is applied as one vectorized
    column-then-row update. Converged when the off-diagonal Frobenius mass
    drops below 1e-12 relative to the input norm.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got {mat.shape}")
    if mat.size and np.abs(mat - mat.T).max() > 1e-10:
        raise ValidationError("matrix is not symmetric within 1e-10")
    n = mat.shape[0]
    if n == 0:
        return LaplacianEig(np.zeros(0), np.zeros((0, 0)))
    if n == 1:
        return LaplacianEig(mat.reshape(1).copy(), np.ones((1, 1)))

    a = 0.5 * (mat + mat.T)
    v = np.eye(n)
    tol = 1e-12 * max(1.0, np.linalg.norm(mat))
    m = n + (n % 2)
    rounds = [
        [(p, q) for p, q in rnd if p < n and q < n] for rnd in _round_robin(m)
    ]

    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(MAX_SWEEPS):
        off = np.linalg.norm(a[offdiag])
        if off <= tol:
            break
        for rnd in rounds:
            pq = np.array(rnd, dtype=np.int64)
            p, q = pq[:, 0], pq[:, 1]
            apq = a[p, q]
            live = apq != 0.0
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            # tau may overflow to inf for denormal apq; t then underflows
            # to the correct zero-angle rotation
            with np.errstate(over="ignore"):
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # disjoint pairs: one fused column update, then the row mirror
            ap, aq = a[:, p], a[:, q]
            a[:, p] = ap * c - aq * s
            a[:, q] = ap * s + aq * c
            rp, rq = a[p, :], a[q, :]
            cc, ss = c[:, None], s[:, None]
            a[p, :] = rp * cc - rq * ss
            a[q, :] = rp * ss + rq * cc
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    else:
        raise NumericError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    vectors = _canonical_signs(vectors)
    values, vectors = _order_ties(values, vectors)
    return LaplacianEig(values, vectors)


def _canonical_signs(vectors):
    """Flip columns so the first entry above 1e-8 in magnitude is positive."""
    vectors = vectors.copy()
    big = np.abs(vectors) > 1e-8
    any_big = big.any(axis=0)
    first = np.where(any_big, big.argmax(axis=0), 0)
    lead = vectors[first, np.arange(vectors.shape[1])]
    vectors[:, (lead < 0) & any_big] *= -1.0
    return vectors


def _order_ties(values, vectors):
    """Within exactly-tied eigenvalues, order columns lexicographically."""
    start = 0
    n = values.size
    while start < n:
        stop = start + 1
        while stop < n and abs(values[stop] - values[start]) <= 1e-12:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            # descending, so identity-like blocks keep their natural order
            order = np.lexsort(block[::-1])[::-1]
            vectors[:, start:stop] = block[:, order]
        start = stop
    return values, vectors


def graph_laplacian_eig(g):
    """Eigendecomposition of g's normalized Laplacian, cached on the graph."""
    if "lap_eig" not in g._cache:
        g._cache["lap_eig"] = symmetric_eig(normalized_laplacian(g))
    return g._cache["lap_eig"]


def laplacian_pe(g, spec, rng=None):
    """n x k positional encoding from the k smallest non-trivial eigenvectors.

    The first c columns of the spectrum (eigenvalues numerically zero; c is
    the number of connected components) are skipped. Missing columns are
    zero-padded. sign_mode random_flip multiplies each column by an
    independent +-1 drawn from rng per call; with rng=None columns are left
    in canonical signs (the evaluation-time convention).
    """
    if spec.kind != "laplacian":
        raise ValidationError(f"laplacian_pe called with kind {spec.kind!r}")
    eig = graph_laplacian_eig(g)
    n_trivial = int((eig.eigenvalues < ZERO_EIGENVALUE_TOL).sum())
    avail = eig.eigenvectors[:, n_trivial : n_trivial + spec.k]
    out = np.zeros((g.n, spec.k))
    out[:, : avail.shape[1]] = avail
    if spec.sign_mode == "absolute":
        return np.abs(out)
    if spec.sign_mode == "random_flip" and rng is not None:
        out = out * np.where(rng.random(spec.k) < 0.5, -1.0, 1.0)
    return out


def index_pe(g, spec, rng=None):
    """n x k one-hot encoding of each node's position in an ordering.

    order_mode fixed uses node ids; random draws a fresh uniform permutation
    per call (rng=None falls back to the fixed ordering). Positions >= k get
    all-zero rows (truncated one-hot).
    """
    if spec.kind != "index":
        raise ValidationError(f"index_pe called with kind {spec.kind!r}")
    if spec.order_mode == "random" and rng is not None:
        pos = rng.permutation(g.n)
    else:
        pos = np.arange(g.n)
    out = np.zeros((g.n, spec.k))
    hot = pos < spec.k
    out[np.flatnonzero(hot), pos[hot]] = 1.0
    return out
