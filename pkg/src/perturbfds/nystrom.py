"""Nystrom discretization of the second-kind boundary integral operators.

Off-panel interactions use the native Gauss rule, ``K(x_i, y_j) w_j``.  Two
cases need more care:

* Self panels.  Laplace only needs the smooth diagonal limit.  The
  Helmholtz kernel has a logarithmic singularity, handled by splitting
  ``K = K_smooth + K_log log|u - u_i|`` and integrating the log part against
  the panel's Lagrange basis with precomputed product weights.
* Targets within one panel length of a Helmholtz source panel (neighbouring
  panels, junctions between kept and new pieces).  These rows are
  recomputed by Gauss quadrature graded geometrically toward the closest
  point on the panel, with the density interpolated from the panel nodes.

Both are stored as a sparse matrix of differences from the naive rule.
"""

from __future__ import annotations

import functools
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy import special

from .geometry import Discretization, gauss_legendre
from .kernels import KernelSpec, hankel01, kernel_matrix, kernel_matrix_pair, slp_matrix

_TWO_PI = 2.0 * np.pi
NEAR_RADIUS = 1.0
_ON_CURVE_TOL = 1e-13
_GRADED_ORDER = 16
# plain 16-point Gauss is accurate to ~rho^-32 for targets outside this ellipse
RHO_SAFE = 4.0


def barycentric_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lagrange basis of ``nodes`` evaluated at ``x``: ``P[q, j] = L_j(x_q)``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    lam = 1.0 / diff.prod(axis=1)
    d = x[:, None] - nodes[None, :]
    exact = d == 0
    d[exact] = 1.0
    terms = lam / d
    P = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        P[rows] = exact[rows].astype(float)
    return P


def _graded_rule(length: float, levels: int = 60):
    """Gauss offsets on ``[0, length]`` graded dyadically toward 0 (``length`` may be negative)."""
    u, g = gauss_legendre(_GRADED_ORDER)
    edges = length * np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    lo, hi = edges[:-1], edges[1:]
    x = (0.5 * (lo + hi))[:, None] + (0.5 * (hi - lo))[:, None] * u
    w = np.abs(0.5 * (hi - lo))[:, None] * g
    return x.ravel(), w.ravel()


@functools.lru_cache(maxsize=None)
def log_weights(p: int) -> np.ndarray:
    """Product weights ``W[i, j] = int_{-1}^{1} log|t - u_i| L_j(t) dt`` for Gauss nodes ``u``."""
    u, _ = gauss_legendre(p)
    W = np.empty((p, p))
    for i, ui in enumerate(u):
        xl, wl = _graded_rule(-1.0 - ui)
        xr, wr = _graded_rule(1.0 - ui)
        off = np.concatenate([xl, xr])
        w = np.concatenate([wl, wr])
        W[i] = (w * np.log(np.abs(off))) @ barycentric_matrix(u, ui + off)
    W.setflags(write=False)
    return W


def laplace_dlp_diagonal(disc: Discretization, i: Optional[int] = None):
    """Diagonal entry ``-kappa_i w_i / (4 pi)`` of the Laplace double-layer matrix."""
    vals = -disc.curvature * disc.weights / (4.0 * np.pi)
    return vals if i is None else float(vals[i])


def _helmholtz_self_block(disc: Discretization, j: int, spec: KernelSpec) -> np.ndarray:
    """Kernel-split quadrature block for panel ``j`` acting on itself."""
    p = disc.p
    idx = disc.panel_nodes(j)
    u, g = gauss_legendre(p)
    x = disc.points[idx]
    n = disc.normals[idx]
    s = disc.local_speed[idx]
    omega, eta = spec.omega, spec.eta
    dx = x[:, None, 0] - x[None, :, 0]
    dy = x[:, None, 1] - x[None, :, 1]
    r = np.hypot(dx, dy)
    np.fill_diagonal(r, 1.0)
    dn = dx * n[None, :, 0] + dy * n[None, :, 1]
    z = omega * r
    h0, h1 = hankel01(z)
    K = 0.25j * (omega * h1 * dn / r + eta * h0)
    Klog = -omega / _TWO_PI * special.j1(z) * dn / r - eta * special.j0(z) / _TWO_PI
    du = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(du, 1.0)
    Ksmooth = K - Klog * np.log(du)
    diag = (-disc.curvature[idx] / (4.0 * np.pi)
            + eta * (0.25j - (np.euler_gamma + np.log(0.5 * omega * s)) / _TWO_PI))
    np.fill_diagonal(Ksmooth, diag)
    np.fill_diagonal(Klog, -eta / _TWO_PI)
    return Ksmooth * (g * s)[None, :] + Klog * log_weights(p) * s[None, :]


def _closest_parameters(curve, mid, half, X, iters: int = 4):
    """Closest panel parameter ``u*`` in [-1, 1] and distance for each target in ``X``."""
    us = np.linspace(-1.0, 1.0, 65)
    Y = curve.position(mid + half * us)
    d2 = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)
    ustar = us[np.argmin(d2, axis=1)]
    for _ in range(iters):
        t = mid + half * ustar
        y = curve.position(t)
        d1 = half * curve.derivative(t)
        dd = half * half * curve.second_derivative(t)
        diff = y - X
        f = (diff * d1).sum(axis=1)
        fp = (d1 * d1).sum(axis=1) + (diff * dd).sum(axis=1)
        step = np.where(fp > 0, f / np.where(fp > 0, fp, 1.0), 0.0)
        ustar = np.clip(ustar - step, -1.0, 1.0)
    y = curve.position(mid + half * ustar)
    dist = np.hypot(*(y - X).T)
    speed = half * np.hypot(*curve.derivative(mid + half * ustar).T)
    return ustar, dist, speed


def _bernstein_rho(ustar, du):
    """Bernstein ellipse parameter of the complex preimage ``u* + i du``."""
    z = ustar + 1j * du
    w = np.sqrt(z * z - 1.0)
    return np.maximum(np.abs(z + w), np.abs(z - w))


def _one_side(ustar, du, end):
    """Dyadic intervals from ``u*`` toward ``end`` (+1 or -1), innermost width ``du / 2``."""
    span = end * (end - ustar)
    with np.errstate(divide="ignore"):
        kmax = np.ceil(np.log2(np.maximum(2.0 * span / du, 1.0))).astype(int)
    count = np.where(span > 0, kmax + 1, 0)
    owner = np.repeat(np.arange(ustar.size), count)
    k = np.arange(owner.size) - np.repeat(np.cumsum(count) - count, count)
    edge_hi = np.minimum(0.5 * du[owner] * 2.0 ** k, span[owner])
    edge_lo = np.where(k > 0, np.minimum(0.5 * du[owner] * 2.0 ** (k - 1), span[owner]), 0.0)
    lo = ustar[owner] + end * edge_lo
    hi = ustar[owner] + end * edge_hi
    return owner, lo, hi


def _graded_rows(disc: Discretization, j: int, X: np.ndarray, spec: KernelSpec,
                 ustar=None, du=None) -> np.ndarray:
    """Accurate quadrature rows ``(len(X), p)`` for panel ``j`` at nearby off-panel targets."""
    a, b = disc.panel_bounds[j]
    curve = disc.curves[disc.panel_curve[j]]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    if ustar is None:
        ustar, dist, speed = _closest_parameters(curve, mid, half, X)
        if np.any(dist <= _ON_CURVE_TOL * disc.panel_lengths[j]):
            raise ValueError("target lies on a source panel away from its nodes; singular "
                             "quadrature for overlapping discretizations is not supported")
        du = dist / speed
    o1, lo1, hi1 = _one_side(ustar, du, 1.0)
    o2, lo2, hi2 = _one_side(ustar, du, -1.0)
    owner = np.concatenate([o1, o2])
    lo = np.concatenate([lo1, lo2])
    hi = np.concatenate([hi1, hi2])
    gu, gw = gauss_legendre(_GRADED_ORDER)
    c, h = 0.5 * (lo + hi), 0.5 * np.abs(hi - lo)
    uq = (c[:, None] + (0.5 * (hi - lo))[:, None] * gu).ravel()
    wq = (h[:, None] * gw).ravel()
    tgt = np.repeat(owner, _GRADED_ORDER)
    y, ny, speed_q, _ = curve.frame(mid + half * uq)
    dxy = X[tgt] - y
    r = np.hypot(dxy[:, 0], dxy[:, 1])
    dn = dxy[:, 0] * ny[:, 0] + dxy[:, 1] * ny[:, 1]
    h0, h1 = hankel01(spec.omega * r)
    f = 0.25j * (spec.omega * h1 * dn / r + spec.eta * h0) * speed_q * half * wq
    P = barycentric_matrix(gauss_legendre(disc.p)[0], uq)
    S = sp.csr_matrix((f, (tgt, np.arange(tgt.size))), shape=(X.shape[0], tgt.size))
    return np.asarray(S @ P)


def quadrature_corrections(targets: np.ndarray, src: Discretization, spec: KernelSpec,
                           panels=None, near_radius: float = NEAR_RADIUS) -> sp.csr_matrix:
    """Sparse ``accurate - naive`` corrections for the block ``targets x src``.

    Targets that coincide with a source node get the self-panel rule for that
    node's panel; for Helmholtz, other targets within ``near_radius`` panel
    lengths of a source panel get graded quadrature rows.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    m = targets.shape[0]
    if panels is None:
        panels = np.arange(src.n_panels)
    if m == 0 or len(panels) == 0:
        return sp.csr_matrix((m, src.n), dtype=spec.dtype)
    tree = cKDTree(targets)
    p = src.p
    rows, cols, vals = [], [], []
    lengths = src.panel_lengths
    for j in panels:
        idx = src.panel_nodes(j)
        pts = src.points[idx]
        if not spec.is_helmholtz:
            for a, hits in enumerate(tree.query_ball_point(pts, 0.0)):
                for t in hits:
                    if np.array_equal(targets[t], pts[a]):
                        rows.append(np.array([t]))
                        cols.append(np.array([idx[a]]))
                        vals.append(np.array([-src.curvature[idx[a]] * src.weights[idx[a]] / (4 * np.pi)]))
            continue
        center = pts.mean(axis=0)
        extent = np.hypot(*(pts - center).T).max()
        cand = np.asarray(tree.query_ball_point(center, extent + near_radius * lengths[j]), dtype=int)
        if cand.size == 0:
            continue
        d = np.hypot(targets[cand, None, 0] - pts[None, :, 0], targets[cand, None, 1] - pts[None, :, 1])
        cand_d = d.min(axis=1)
        keep = cand_d < near_radius * lengths[j]
        cand, d = cand[keep], d[keep]
        if cand.size == 0:
            continue
        on_node = d == 0
        self_t = on_node.any(axis=1)
        naive = None
        if self_t.any():
            block = _helmholtz_self_block(src, j, spec)
            tsel = cand[self_t]
            node = np.argmax(on_node[self_t], axis=1)
            acc = block[node]
            naive = kernel_matrix(targets[tsel], pts, src.normals[idx], spec) * src.weights[idx]
            rows.append(np.repeat(tsel, p))
            cols.append(np.tile(idx, tsel.size))
            vals.append((acc - naive).ravel())
        near_t = cand[~self_t]
        if near_t.size:
            a, b = src.panel_bounds[j]
            curve = src.curves[src.panel_curve[j]]
            ustar, dist, speed = _closest_parameters(curve, 0.5 * (a + b), 0.5 * (b - a),
                                                     targets[near_t])
            if np.any(dist <= _ON_CURVE_TOL * lengths[j]):
                raise ValueError("target lies on a source panel away from its nodes; singular "
                                 "quadrature for overlapping discretizations is not supported")
            du = dist / speed
            need = _bernstein_rho(ustar, du) < RHO_SAFE
            near_t, ustar, du = near_t[need], ustar[need], du[need]
        if near_t.size:
            acc = _graded_rows(src, j, targets[near_t], spec, ustar, du)
            naive = kernel_matrix(targets[near_t], pts, src.normals[idx], spec) * src.weights[idx]
            rows.append(np.repeat(near_t, p))
            cols.append(np.tile(idx, near_t.size))
            vals.append((acc - naive).ravel())
    if not rows:
        return sp.csr_matrix((m, src.n), dtype=spec.dtype)
    out = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(m, src.n), dtype=spec.dtype)
    return out.tocsr()


def assemble_block(src: Discretization, trg, spec: KernelSpec, src_idx=None, trg_idx=None,
                   corrections: Optional[sp.spmatrix] = None) -> np.ndarray:
    """Dense Nystrom block: entry ``(i, j) = K(x_i, y_j) w_j`` with quadrature corrections.

    ``trg`` is a Discretization or an ``(m, 2)`` array of points.  Index
    arrays select subsets of source and target nodes.  ``corrections`` may
    pass a precomputed full ``trg x src`` correction matrix; otherwise the
    needed corrections are computed for the selected nodes.  No identity
    term is added.
    """
    tpts = trg.points if isinstance(trg, Discretization) else np.asarray(trg, dtype=float)
    if trg_idx is not None:
        tpts = tpts[np.asarray(trg_idx)]
    if src_idx is None:
        src_idx = np.arange(src.n)
    src_idx = np.asarray(src_idx)
    M = kernel_matrix(tpts, src.points[src_idx], src.normals[src_idx], spec) * src.weights[src_idx]
    if corrections is not None:
        C = corrections if trg_idx is None else corrections[np.asarray(trg_idx)]
        C = C[:, src_idx]
    else:
        panels = np.unique(src.panel[src_idx])
        C = quadrature_corrections(tpts, src, spec, panels)[:, src_idx]
    if C.nnz:
        M += C.toarray()
    return M


class SystemOperator:
    """Second-kind system ``jump * I + K`` on a closed discretization.

    Provides arbitrary dense sub-blocks plus the far-field sampling used by
    the hierarchical compressor.
    """

    def __init__(self, disc: Discretization, spec: KernelSpec,
                 corrections: Optional[sp.spmatrix] = None):
        self.disc = disc
        self.spec = spec
        if corrections is None:
            corrections = quadrature_corrections(disc.points, disc, spec)
        self.corrections = sp.csr_matrix(corrections)
        self._corr_csc = self.corrections.tocsc()
        self._tree = cKDTree(disc.points)

    @property
    def n(self) -> int:
        return self.disc.n

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dtype(self):
        return self.spec.dtype

    @property
    def block_quantum(self) -> int:
        return self.disc.p

    def entries(self, I, J) -> np.ndarray:
        I = np.asarray(I, dtype=int)
        J = np.asarray(J, dtype=int)
        d = self.disc
        M = kernel_matrix(d.points[I], d.points[J], d.normals[J], self.spec) * d.weights[J]
        C = self.corrections[I][:, J]
        if C.nnz:
            M += C.toarray()
        _, ia, ja = np.intersect1d(I, J, assume_unique=True, return_indices=True)
        M[ia, ja] += self.spec.jump
        return M

    def dense(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.entries(idx, idx)

    def matvec(self, x):
        return self.dense() @ x

    def _coupled(self, lo: int, hi: int) -> np.ndarray:
        """Indices outside ``[lo, hi)`` tied to it through quadrature corrections."""
        a = self.corrections[lo:hi].indices
        b = self._corr_csc[:, lo:hi].indices
        idx = np.unique(np.concatenate([a, b]))
        return idx[(idx < lo) | (idx >= hi)]

    def far_field(self, lo: int, hi: int, I, proxy_ratio: float = 1.75, eps: float = 1e-10):
        """Samples spanning the rows ``A(I, far)`` and columns ``A(far, I)``.

        Interactions with points inside the proxy circle are taken exactly;
        everything beyond it is represented by single and double layer sources
        (for rows) or targets (for columns) on the circle.
        """
        d = self.disc
        I = np.asarray(I, dtype=int)
        box = d.points[lo:hi]
        center = 0.5 * (box.max(axis=0) + box.min(axis=0))
        radius = float(np.hypot(*(box - center).T).max())
        R = proxy_ratio * radius
        near = np.asarray(self._tree.query_ball_point(center, R), dtype=int)
        near = near[(near < lo) | (near >= hi)]
        near = np.union1d(near, self._coupled(lo, hi))
        # any point outside the circle but all inside: nothing is far
        n_far = self.n - (hi - lo) - near.size
        blocks_r, blocks_c = [], []
        if near.size:
            rows, cols = kernel_matrix_pair(d.points[I], d.normals[I], d.points[near],
                                            d.normals[near], self.spec)
            rows *= d.weights[near]
            cols *= d.weights[I]
            corr = self.corrections[I][:, near]
            if corr.nnz:
                rows += corr.toarray()
            corr = self.corrections[near][:, I]
            if corr.nnz:
                cols += corr.toarray()
            blocks_r.append(rows)
            blocks_c.append(cols)
        if n_far > 0:
            npx = proxy_count(eps, proxy_ratio, self.spec.omega * R)
            theta = _TWO_PI * np.arange(npx) / npx
            zc = np.column_stack([np.cos(theta), np.sin(theta)])
            z = center + R * zc
            wz = _TWO_PI * R / npx
            blocks_r.append(slp_matrix(d.points[I], z, self.spec) * wz)
            blocks_r.append(kernel_matrix(d.points[I], z, zc, self.spec) * wz)
            blocks_c.append(kernel_matrix(z, d.points[I], d.normals[I], self.spec) * d.weights[I])
        row = np.hstack(blocks_r) if blocks_r else np.zeros((I.size, 0), dtype=self.dtype)
        col = np.vstack(blocks_c) if blocks_c else np.zeros((0, I.size), dtype=self.dtype)
        return row, col


def proxy_count(eps: float, ratio: float, omega_r: float = 0.0) -> int:
    n = 2 * int(np.ceil(np.log(1.0 / eps) / np.log(ratio) + omega_r)) + 16
    return max(32, n)


def assemble_system(disc: Discretization, spec: KernelSpec) -> np.ndarray:
    """Full dense ``N x N`` system matrix with the identity jump term."""
    return SystemOperator(disc, spec).dense()
