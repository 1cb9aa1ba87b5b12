"""Randomized interpolative decompositions and the block-structured update factors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import aslinearoperator

from .errors import DenseRankWarning

DEFAULT_EPS = 1e-10
OVERSAMPLE = 10
INITIAL_RANK = 16
# blocked power iteration used for the norm and residual checks
NORM_BLOCK = 4
NORM_ITERS = 4


def spectral_norm_estimate(apply: Callable, apply_adjoint: Callable, n: int, iters: int = 10,
                           seed: int = 0, dtype=np.float64, block: int = 1) -> float:
    """Power-iteration estimate of ``||A||_2`` from matrix-action oracles.

    With ``block > 1`` this is subspace iteration on ``A^H A`` with that many
    vectors, which needs fewer (blocked) passes for the same accuracy.  The
    estimate approaches the norm from below.
    """
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    b = max(1, min(block, n))
    X = rng.standard_normal((n, b))
    if np.iscomplexobj(np.empty(0, dtype=dtype)):
        X = X + 1j * rng.standard_normal((n, b))
    X, _ = np.linalg.qr(X)
    est = 0.0
    for _ in range(iters):
        Y = apply(X)
        if not np.any(Y):
            return 0.0
        Z = apply_adjoint(Y)
        if not np.any(Z):
            return float(np.linalg.norm(Y, 2))
        X, Rz = np.linalg.qr(Z)
        est = np.sqrt(np.linalg.norm(Rz, 2))
    return float(est)


@dataclass
class LowRankFactor:
    """``L @ R`` approximation of a matrix, with per-block rank bookkeeping.

    Attributes
    ----------
    L, R : ndarray
        ``(m, k)`` and ``(k, n)`` factors.
    eps : float
        Relative tolerance used to pick the rank.
    ledger : dict
        Rank contributed by each named source block.
    columns : ndarray, optional
        Skeleton column indices when produced by :func:`id_factor`; then
        ``L`` equals ``A[:, columns]``.
    residual, norm : float
        Power-iteration estimates of ``||A - L R||`` and ``||A||``.
    """

    L: np.ndarray
    R: np.ndarray
    eps: float = DEFAULT_EPS
    ledger: dict = field(default_factory=dict)
    columns: Optional[np.ndarray] = None
    residual: float = 0.0
    norm: float = 0.0

    @property
    def rank(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self):
        return (self.L.shape[0], self.R.shape[1])

    def dense(self) -> np.ndarray:
        return self.L @ self.R

    def matvec(self, x):
        return self.L @ (self.R @ x)


def _sketch_id(Y: np.ndarray, thresh: float):
    """Column ID of a sketch: skeleton columns and interpolation matrix."""
    n = Y.shape[1]
    R, piv = sla.qr(Y, mode="r", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.empty(0, dtype=int), np.zeros((0, n), dtype=Y.dtype), 0
    k = int(np.count_nonzero(diag > thresh * diag[0]))
    T = sla.solve_triangular(R[:k, :k], R[:k, k:], check_finite=False)
    P = np.zeros((k, n), dtype=np.result_type(Y.dtype, T.dtype))
    P[:, piv[:k]] = np.eye(k)
    P[:, piv[k:]] = T
    return piv[:k], P, k


def id_factor(apply: Callable, apply_adjoint: Callable, m: int, n: int,
              eps: float = DEFAULT_EPS, seed: int = 0, dtype=np.float64,
              warn: bool = True) -> LowRankFactor:
    """Adaptive randomized column interpolative decomposition ``A ~ A[:, J] P``.

    ``apply(X)`` must return ``A @ X`` for an ``(n, r)`` block and
    ``apply_adjoint(Y)`` must return ``A^H @ Y``.  The sketch ``Omega^H A``
    starts with ``16 + 10`` rows and doubles until its pivoted QR reveals a
    rank below the sketch size minus the oversampling.  The rank is then
    checked with a blocked power estimate of the residual and the threshold
    tightened if the residual exceeds ``eps * ||A||``.

    Warns
    -----
    DenseRankWarning
        If the rank exceeds ``min(m, n) / 2``.
    """
    complex_ = np.iscomplexobj(np.empty(0, dtype=dtype))
    if m == 0 or n == 0:
        return LowRankFactor(np.zeros((m, 0), dtype), np.zeros((0, n), dtype), eps)
    rng = np.random.default_rng(seed)
    cap = min(m, n)
    ell = min(INITIAL_RANK + OVERSAMPLE, cap)
    norm = spectral_norm_estimate(apply, apply_adjoint, n, NORM_ITERS, seed + 1, dtype, NORM_BLOCK)
    if norm == 0.0:
        return LowRankFactor(np.zeros((m, 0), dtype), np.zeros((0, n), dtype), eps, norm=0.0)
    thresh = eps
    Y = np.zeros((0, n), dtype=dtype)
    while True:
        extra = ell - Y.shape[0]
        if extra > 0:
            omega = rng.standard_normal((m, extra))
            if complex_:
                omega = omega + 1j * rng.standard_normal((m, extra))
            Y = np.vstack([Y, apply_adjoint(omega).conj().T])
        J, P, k = _sketch_id(Y, thresh)
        if k > ell - OVERSAMPLE and ell < cap:
            ell = min(2 * ell, cap)
            continue
        E = np.zeros((n, k), dtype=dtype)
        E[J, np.arange(k)] = 1.0
        L = apply(E) if k else np.zeros((m, 0), dtype=dtype)

        def res_apply(X, L=L, P=P):
            return apply(X) - L @ (P @ X)

        def res_adjoint(Y_, L=L, P=P):
            return apply_adjoint(Y_) - P.conj().T @ (L.conj().T @ Y_)

        residual = spectral_norm_estimate(res_apply, res_adjoint, n, NORM_ITERS, seed + 2, dtype,
                                          NORM_BLOCK)
        if residual <= eps * norm or (k == cap) or thresh < eps * 1e-4:
            break
        # residual too large: ask for a tighter pivot threshold and, if the
        # sketch is saturated, a larger sketch
        thresh *= 0.1
        if k > ell - OVERSAMPLE:
            ell = min(2 * ell, cap)
    if warn and k > cap / 2:
        warnings.warn(f"numerical rank {k} exceeds half of min({m}, {n}); a dense block may be cheaper",
                      DenseRankWarning, stacklevel=2)
    return LowRankFactor(L, P, eps, columns=np.asarray(J), residual=residual, norm=norm)


def id_factor_dense(M: np.ndarray, eps: float = DEFAULT_EPS, seed: int = 0,
                    warn: bool = True) -> LowRankFactor:
    """:func:`id_factor` with oracles wrapping an explicit matrix."""
    M = np.asarray(M)
    op = aslinearoperator(M)
    return id_factor(op.matmat, op.rmatmat, M.shape[0], M.shape[1], eps, seed,
                     dtype=M.dtype, warn=warn)


@dataclass(frozen=True)
class ExtendedLayout:
    """Index layout of the extended unknown ``[sigma_o (original order); sigma_p]``."""

    kept: np.ndarray
    cut: np.ndarray
    n_o: int
    n_p: int

    @classmethod
    def from_plan(cls, plan) -> "ExtendedLayout":
        return cls(np.asarray(plan.kept), np.asarray(plan.cut), plan.n_o, plan.n_p)

    @property
    def size(self) -> int:
        return self.n_o + self.n_p

    @property
    def n_k(self) -> int:
        return self.kept.size

    @property
    def n_c(self) -> int:
        return self.cut.size

    @property
    def o(self) -> np.ndarray:
        return np.arange(self.n_o)

    @property
    def p(self) -> np.ndarray:
        return self.n_o + np.arange(self.n_p)


@dataclass
class FactorBlock:
    """One term ``E_rows @ left @ right @ E_cols^T`` of a structured factorization.

    ``right is None`` means the identity (full-rank block carried as is).
    """

    name: str
    rows: np.ndarray
    cols: np.ndarray
    left: np.ndarray
    right: Optional[np.ndarray]

    @property
    def rank(self) -> int:
        return self.left.shape[1]


@dataclass
class UpdateFactor:
    """Structured low-rank factorization ``L R`` of an extended-system update matrix."""

    formulation: str
    layout: ExtendedLayout
    blocks: list
    eps: float
    ledger: dict

    @property
    def rank(self) -> int:
        return sum(b.rank for b in self.blocks)

    @property
    def dtype(self):
        return np.result_type(*[b.left.dtype for b in self.blocks]) if self.blocks else np.float64

    def dense_L(self) -> np.ndarray:
        L = np.zeros((self.layout.size, self.rank), dtype=self.dtype)
        col = 0
        for b in self.blocks:
            L[b.rows, col:col + b.rank] = b.left
            col += b.rank
        return L

    def dense_R(self) -> np.ndarray:
        R = np.zeros((self.rank, self.layout.size), dtype=self.dtype)
        row = 0
        for b in self.blocks:
            R[row:row + b.rank, b.cols] = np.eye(b.rank) if b.right is None else b.right
            row += b.rank
        return R

    def apply_R(self, y: np.ndarray) -> np.ndarray:
        """``R @ y`` without forming ``R``."""
        parts = []
        for b in self.blocks:
            yc = y[b.cols]
            parts.append(yc if b.right is None else b.right @ yc)
        if not parts:
            return np.zeros((0,) + y.shape[1:], dtype=y.dtype)
        return np.concatenate(parts, axis=0)

    def dense(self) -> np.ndarray:
        return self.dense_L() @ self.dense_R()


def _factor(name, M, eps, seed, exact, warn):
    if exact:
        return M, None, M.shape[1]
    f = id_factor_dense(M, eps, seed, warn=warn)
    return f.L, f.R, f.rank


def factor_update_new(blocks: Mapping[str, np.ndarray], layout: ExtendedLayout,
                      eps: float = DEFAULT_EPS, seed: int = 0, exact: bool = False,
                      warn: bool = True) -> UpdateFactor:
    """Factor ``[[0, -A_kc, A_kp], [0, 0, 0], [A_pk, 0, 0]]`` block by block.

    ``blocks`` holds ``A_kc (N_k x N_c)``, ``A_kp (N_k x N_p)`` and
    ``A_pk (N_p x N_k)``.  With ``exact=True`` the blocks are carried
    unfactored (identity right factors).
    """
    spec = [("kc", "A_kc", layout.kept, layout.cut, -1.0),
            ("kp", "A_kp", layout.kept, layout.p, 1.0),
            ("pk", "A_pk", layout.p, layout.kept, 1.0)]
    return _build("new", spec, blocks, layout, eps, seed, exact, warn)


def factor_update_orig(blocks: Mapping[str, np.ndarray], layout: ExtendedLayout,
                       eps: float = DEFAULT_EPS, seed: int = 0, exact: bool = False,
                       warn: bool = True) -> UpdateFactor:
    """Factor the original-formulation update matrix.

    Columns ``c`` carry ``-A_kc`` (rows ``k``) and ``-B_cc`` (rows ``c``),
    columns ``p`` carry ``A_op`` (all original rows) and rows ``p`` carry
    ``A_pk``.  ``B_cc`` (``A_cc`` with zero diagonal) is kept at full rank.
    """
    B = np.array(blocks["B_cc"], copy=True)
    np.fill_diagonal(B, 0)
    full = dict(blocks)
    full["B_cc"] = B
    spec = [("kc", "A_kc", layout.kept, layout.cut, -1.0),
            ("cc", "B_cc", layout.cut, layout.cut, -1.0),
            ("op", "A_op", layout.o, layout.p, 1.0),
            ("pk", "A_pk", layout.p, layout.kept, 1.0)]
    return _build("orig", spec, full, layout, eps, seed, exact, warn)


# per-block seed offsets, shared by both formulations so common blocks factor identically
_SEED_OFFSET = {"kc": 0, "kp": 17, "pk": 34, "op": 51}


def _build(formulation, spec, blocks, layout, eps, seed, exact, warn):
    out = []
    ledger = {}
    for tag, key, rows, cols, sign in spec:
        M = np.asarray(blocks[key])
        if M.shape != (rows.size, cols.size):
            raise ValueError(f"{key} has shape {M.shape}, expected {(rows.size, cols.size)}")
        if tag == "cc":
            left, right, k = M, None, M.shape[1]
            ledger["N_c"] = k
        else:
            left, right, k = _factor(key, M, eps, seed + _SEED_OFFSET[tag], exact, warn)
            ledger[f"k_{tag}"] = k
        out.append(FactorBlock(key, rows, cols, sign * left, right))
    ledger["k_total"] = sum(b.rank for b in out)
    ledger[f"k_{formulation}"] = ledger["k_total"]
    return UpdateFactor(formulation, layout, out, eps, ledger)
