"""Hierarchically block separable (HBS) compression and direct inversion.

The index range ``[0, N)`` is split recursively into contiguous halves.  Each
non-root node gets a joint row/column skeleton chosen by an interpolative
decomposition of its off-diagonal interactions, so that

    A(I_tau, far)  ~  U_tau A(skel_tau, far)
    A(far, I_tau)  ~  A(far, skel_tau) W_tau,     W_tau = U_tau^T.

Parents work on the union of their children's skeletons and only store the
sibling coupling blocks ``A(skel_a, skel_b)``.  The inverse uses the
telescoping factorization of Gillman, Young and Martinsson (2012).

Operators handed to :func:`hbs_compress` provide ``n``, ``dtype``,
``block_quantum`` (split granularity), ``entries(I, J)`` and
``far_field(lo, hi, I, proxy_ratio, eps) -> (rows, cols)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import RankGrowthWarning, SolverSingularError

DEFAULT_LEAF = 64
DEFAULT_PROXY_RATIO = 1.75
DENSE_CUTOFF = 1024
# sketch far-field blocks wider than this many times their height
_SKETCH_WIDTH = 2
# the sketch blurs the pivot threshold; this factor restores the unsketched accuracy
_SKETCH_TIGHT = 0.1


class MatrixOperator:
    """Explicit matrix viewed through the HBS operator protocol (no proxy acceleration)."""

    def __init__(self, M: np.ndarray, block_quantum: int = 1):
        self.M = np.asarray(M)
        if self.M.ndim != 2 or self.M.shape[0] != self.M.shape[1]:
            raise ValueError("MatrixOperator needs a square matrix")
        self.block_quantum = int(block_quantum)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def dtype(self):
        return self.M.dtype

    def entries(self, I, J) -> np.ndarray:
        return self.M[np.ix_(np.asarray(I), np.asarray(J))]

    def dense(self) -> np.ndarray:
        return self.M

    def far_field(self, lo, hi, I, proxy_ratio=DEFAULT_PROXY_RATIO, eps=1e-10):
        out = np.r_[0:lo, hi:self.n]
        I = np.asarray(I)
        return self.M[np.ix_(I, out)], self.M[np.ix_(out, I)]


@dataclass
class HBSNode:
    lo: int
    hi: int
    level: int
    parent: Optional[int] = None
    children: tuple = ()
    index: Optional[np.ndarray] = None
    skel: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    B12: Optional[np.ndarray] = None
    B21: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def rank(self) -> int:
        return 0 if self.skel is None else self.skel.size


def _build_tree(n: int, leaf_size: int, quantum: int) -> list:
    nodes = [HBSNode(0, n, 0)]
    stack = [0]
    while stack:
        t = stack.pop()
        nd = nodes[t]
        size = nd.hi - nd.lo
        if size <= leaf_size:
            continue
        half = int(round(size / 2 / quantum)) * quantum
        mid = nd.lo + min(max(half, quantum), size - quantum)
        if not nd.lo < mid < nd.hi:
            continue
        a = len(nodes)
        nodes.append(HBSNode(nd.lo, mid, nd.level + 1, parent=t))
        nodes.append(HBSNode(mid, nd.hi, nd.level + 1, parent=t))
        nd.children = (a, a + 1)
        stack.extend([a, a + 1])
    return nodes


def _postorder(nodes) -> list:
    order, stack = [], [(0, False)]
    while stack:
        t, done = stack.pop()
        if done or nodes[t].is_leaf:
            order.append(t)
            continue
        stack.append((t, True))
        for c in reversed(nodes[t].children):
            stack.append((c, False))
    return order


def row_id(M: np.ndarray, eps: float):
    """Row interpolative decomposition ``M ~ U @ M[skel]`` by pivoted QR of ``M^T``.

    Wide blocks are first multiplied by a fixed Gaussian matrix with as many
    columns as ``M`` has rows.  This keeps the row space and turns the
    expensive pivoted QR into a matrix product plus a small QR, run at a
    slightly tighter threshold.
    """
    n = M.shape[0]
    if M.size == 0:
        return np.empty(0, dtype=int), np.zeros((n, 0), dtype=M.dtype)
    if M.shape[1] > _SKETCH_WIDTH * n:
        omega = np.random.default_rng(n).standard_normal((M.shape[1], n))
        M = M @ omega
        eps = eps * _SKETCH_TIGHT
    R, piv = sla.qr(M.T, mode="r", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.empty(0, dtype=int), np.zeros((n, 0), dtype=M.dtype)
    k = int(np.count_nonzero(diag > eps * diag[0]))
    T = sla.solve_triangular(R[:k, :k], R[:k, k:], check_finite=False)
    P = np.zeros((k, n), dtype=np.result_type(M.dtype, T.dtype))
    P[:, piv[:k]] = np.eye(k)
    P[:, piv[k:]] = T
    return piv[:k], P.T


def _scaled(block):
    s = np.abs(block).max() if block.size else 0.0
    return block / s if s > 0 else block


@dataclass
class HBSTree:
    """Compressed operator: tree nodes in creation order plus a post-order schedule."""

    nodes: list
    order: list
    n: int
    eps: float
    leaf_size: int
    dtype: type = np.float64
    stats: dict = field(default_factory=dict)

    @property
    def root(self) -> HBSNode:
        return self.nodes[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Compressed matrix-vector (or matrix-matrix) product."""
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"vector length {x.shape[0]} does not match operator size {self.n}")
        nodes = self.nodes
        if nodes[0].is_leaf:
            return nodes[0].D @ x
        dtype = np.result_type(self.dtype, x.dtype)
        xhat = {}
        for t in self.order:
            nd = nodes[t]
            if t == 0:
                continue
            xin = x[nd.lo:nd.hi] if nd.is_leaf else np.concatenate([xhat[c] for c in nd.children])
            xhat[t] = nd.W @ xin
        yhat = {t: np.zeros((nodes[t].rank,) + x.shape[1:], dtype=dtype) for t in self.order if t}
        for t in self.order:
            nd = nodes[t]
            if nd.is_leaf:
                continue
            a, b = nd.children
            yhat[a] += nd.B12 @ xhat[b]
            yhat[b] += nd.B21 @ xhat[a]
        y = np.empty(x.shape, dtype=dtype)
        for t in reversed(self.order):
            nd = nodes[t]
            if t == 0:
                continue
            out = nd.U @ yhat[t]
            if nd.is_leaf:
                y[nd.lo:nd.hi] = nd.D @ x[nd.lo:nd.hi] + out
            else:
                a, b = nd.children
                ka = nodes[a].rank
                yhat[a] += out[:ka]
                yhat[b] += out[ka:]
        return y

    matvec = apply

    def storage(self) -> int:
        """Number of stored matrix entries across all nodes."""
        total = 0
        for nd in self.nodes:
            for M in (nd.U, nd.D, nd.B12, nd.B21):
                if M is not None:
                    total += M.size
        return total

    def ranks(self) -> list:
        return [self.nodes[t].rank for t in self.order if t]

    def check(self) -> None:
        """Assert the structural invariants of the tree."""
        for nd in self.nodes:
            if nd.children:
                a, b = (self.nodes[c] for c in nd.children)
                assert a.lo == nd.lo and a.hi == b.lo and b.hi == nd.hi, "children must partition parent"
            if nd.skel is not None:
                assert nd.skel.size <= nd.index.size <= nd.size, "skeleton larger than block"
                assert np.all((nd.skel >= nd.lo) & (nd.skel < nd.hi)), "skeleton outside block"


def hbs_compress(op, eps: float = 1e-10, leaf_size: int = DEFAULT_LEAF,
                 proxy_ratio: float = DEFAULT_PROXY_RATIO) -> HBSTree:
    """Build the HBS representation of ``op`` bottom-up.

    Warns
    -----
    RankGrowthWarning
        When a skeleton exceeds half of its node's index range.
    """
    n = op.n
    quantum = max(1, int(getattr(op, "block_quantum", 1)))
    nodes = _build_tree(n, max(leaf_size, quantum), quantum)
    order = _postorder(nodes)
    grown = 0
    for t in order:
        nd = nodes[t]
        if nd.is_leaf:
            nd.index = np.arange(nd.lo, nd.hi)
            nd.D = op.entries(nd.index, nd.index)
        else:
            a, b = (nodes[c] for c in nd.children)
            nd.index = np.concatenate([a.skel, b.skel])
            nd.B12 = op.entries(a.skel, b.skel)
            nd.B21 = op.entries(b.skel, a.skel)
        if t == 0:
            continue
        rows, cols = op.far_field(nd.lo, nd.hi, nd.index, proxy_ratio, eps)
        M = np.hstack([_scaled(rows), _scaled(cols).T])
        local, U = row_id(M, eps)
        nd.skel = nd.index[local]
        nd.U = U
        nd.W = U.T.copy()
        if nd.rank > nd.size / 2:
            grown += 1
    if grown:
        warnings.warn(f"{grown} HBS nodes kept more than half of their indices as skeleton",
                      RankGrowthWarning, stacklevel=2)
    dtype = np.result_type(*(nodes[t].D.dtype for t in order if nodes[t].is_leaf))
    return HBSTree(nodes, order, n, eps, leaf_size, dtype, {"rank_growth_nodes": grown})


def _lu(M: np.ndarray):
    if M.size == 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(M, check_finite=False)
        except (sla.LinAlgWarning, ValueError, np.linalg.LinAlgError) as exc:
            raise SolverSingularError(f"singular diagonal block of size {M.shape[0]}") from exc
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= np.finfo(float).eps * max(piv.max(), np.finfo(float).tiny):
        raise SolverSingularError(f"singular diagonal block of size {M.shape[0]}")
    return lu


@dataclass
class _InvNode:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    Dhat: Optional[np.ndarray] = None


class HBSInverse:
    """Telescoping inverse of an :class:`HBSTree`; applies ``A^{-1}`` in ``O(N k)``."""

    def __init__(self, tree: HBSTree):
        self.tree = tree
        self.n = tree.n
        nodes = tree.nodes
        self.factors = {}
        for t in tree.order:
            nd = nodes[t]
            if nd.is_leaf:
                Dt = nd.D
            else:
                a, b = (self.factors[c] for c in nd.children)
                Dt = np.block([[a.Dhat, nd.B12], [nd.B21, b.Dhat]])
            m = Dt.shape[0]
            lu = _lu(Dt)
            eye = np.eye(m, dtype=Dt.dtype)
            Dinv = sla.lu_solve(lu, eye, check_finite=False) if lu is not None else eye[:0, :0]
            if t == 0:
                self.factors[t] = _InvNode(np.zeros((m, 0)), np.zeros((0, m)), Dinv)
                continue
            k = nd.rank
            if k == 0:
                z = np.zeros((m, 0), dtype=Dt.dtype)
                self.factors[t] = _InvNode(z, z.T, Dinv, np.zeros((0, 0), dtype=Dt.dtype))
                continue
            DinvU = Dinv @ nd.U
            WDinv = nd.W @ Dinv
            core = nd.W @ DinvU
            core_lu = _lu(core)
            Dhat = sla.lu_solve(core_lu, np.eye(k, dtype=core.dtype), check_finite=False)
            E = DinvU @ Dhat
            F = Dhat @ WDinv
            G = Dinv - E @ WDinv
            self.factors[t] = _InvNode(E, F, G, Dhat)

    @property
    def dtype(self):
        return self.tree.dtype

    def apply(self, x):
        return self.tree.apply(x)

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"vector length {x.shape[0]} does not match operator size {self.n}")
        nodes, fac = self.tree.nodes, self.factors
        dtype = np.result_type(self.dtype, x.dtype)
        if nodes[0].is_leaf:
            return (fac[0].G @ x).astype(dtype, copy=False)
        xin, uhat = {}, {}
        for t in self.tree.order:
            nd = nodes[t]
            v = x[nd.lo:nd.hi] if nd.is_leaf else np.concatenate([uhat[c] for c in nd.children])
            xin[t] = v
            if t:
                uhat[t] = fac[t].F @ v
        q = {}
        y = np.empty(x.shape, dtype=dtype)
        for t in reversed(self.tree.order):
            nd = nodes[t]
            out = fac[t].G @ xin[t]
            if t:
                out = out + fac[t].E @ q[t]
            if nd.is_leaf:
                y[nd.lo:nd.hi] = out
            else:
                a, b = nd.children
                ka = nodes[a].rank
                q[a], q[b] = out[:ka], out[ka:]
        return y

    solve = apply_inverse


def hbs_invert(tree: HBSTree) -> HBSInverse:
    """Factor the compressed operator for fast inverse application.

    Raises
    ------
    SolverSingularError
        If a diagonal block that must be inverted is singular.
    """
    return HBSInverse(tree)


class DenseSolver:
    """LU-factored dense matrix with the same apply/apply_inverse interface."""

    def __init__(self, M: np.ndarray):
        self.M = np.asarray(M)
        self.n = self.M.shape[0]
        self.lu = _lu(self.M) if self.n else None

    @property
    def dtype(self):
        return self.M.dtype

    def apply(self, x):
        return self.M @ x

    def apply_inverse(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"vector length {x.shape[0]} does not match operator size {self.n}")
        if self.n == 0:
            return np.zeros(x.shape, dtype=np.result_type(self.dtype, x.dtype))
        return sla.lu_solve(self.lu, x, check_finite=False)

    solve = apply_inverse

    def condition_estimate(self) -> float:
        """1-norm condition estimate from LAPACK ``gecon``."""
        if self.n == 0:
            return 1.0
        anorm = np.abs(self.M).sum(axis=0).max()
        gecon = sla.get_lapack_funcs("gecon", (self.lu[0],))
        rcond, _ = gecon(self.lu[0], anorm, norm="1")
        return np.inf if rcond == 0 else 1.0 / rcond


def factor_operator(op, eps: float = 1e-10, leaf_size: int = DEFAULT_LEAF,
                    proxy_ratio: float = DEFAULT_PROXY_RATIO, dense_cutoff: int = DENSE_CUTOFF):
    """Dense LU for ``n <= dense_cutoff``, HBS compression and inversion otherwise."""
    if op.n <= dense_cutoff:
        M = op.dense() if hasattr(op, "dense") else op.entries(np.arange(op.n), np.arange(op.n))
        return DenseSolver(M)
    return hbs_invert(hbs_compress(op, eps, leaf_size, proxy_ratio))
