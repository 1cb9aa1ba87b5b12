"""Laplace and Helmholtz layer kernels.

Conventions: ``G(x, y) = -log|x - y| / (2 pi)``, normals point out of the
curve, and the double layer of unit density is ``-1`` inside a closed curve
and ``0`` outside.  Helmholtz kernels use ``G_w = (i/4) H0(w r)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import NearEvaluationError, SingularityError, SpecialFunctionError

LAPLACE = "laplace-dlp"
HELMHOLTZ = "helmholtz-combined"
_TWO_PI = 2.0 * np.pi
_ROW_CHUNK = 512


@dataclass(frozen=True)
class KernelSpec:
    """Which integral operator to discretize.

    Parameters
    ----------
    equation : {"laplace-dlp", "helmholtz-combined"}
    omega : float
        Wave number; must be positive for Helmholtz, ignored for Laplace.
    coupling : complex, optional
        Weight of the single layer in the combined field; defaults to ``-1j * omega``.
    """

    equation: str = LAPLACE
    omega: float = 0.0
    coupling: Optional[complex] = None

    def __post_init__(self):
        if self.equation not in (LAPLACE, HELMHOLTZ):
            raise ValueError(f"unknown equation tag {self.equation!r}")
        if self.equation == HELMHOLTZ and not self.omega > 0:
            raise ValueError("helmholtz-combined requires omega > 0")

    @classmethod
    def laplace(cls) -> "KernelSpec":
        return cls(LAPLACE)

    @classmethod
    def helmholtz(cls, omega: float, coupling: Optional[complex] = None) -> "KernelSpec":
        return cls(HELMHOLTZ, float(omega), coupling)

    @property
    def is_helmholtz(self) -> bool:
        return self.equation == HELMHOLTZ

    @property
    def eta(self) -> complex:
        if self.coupling is not None:
            return complex(self.coupling)
        return -1j * self.omega

    @property
    def dtype(self):
        return np.complex128 if self.is_helmholtz else np.float64

    @property
    def jump(self) -> float:
        """Identity term of the second-kind system (interior Laplace, exterior Helmholtz)."""
        return 0.5 if self.is_helmholtz else -0.5


def _separation(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r == 0):
        raise SingularityError("kernel evaluated at coincident source and target")
    return d, r


def laplace_green(x, y):
    """``-log|x - y| / (2 pi)``; points broadcast over leading axes."""
    _, r = _separation(x, y)
    return -np.log(r) / _TWO_PI


def laplace_dlp(x, y, n_y):
    """Normal derivative of the Laplace Green's function in the source variable."""
    d, r = _separation(x, y)
    n_y = np.asarray(n_y, dtype=float)
    return (d[..., 0] * n_y[..., 0] + d[..., 1] * n_y[..., 1]) / (_TWO_PI * r * r)


def hankel01(z):
    """``(H0(z), H1(z))`` of the first kind for real positive ``z``.

    Built from the Cephes ``j0, y0, j1, y1`` routines, which are several times
    faster than the general order ``hankel1`` and accurate to a few ulp.
    """
    z = np.asarray(z, dtype=float)
    h0 = special.j0(z) + 1j * special.y0(z)
    h1 = special.j1(z) + 1j * special.y1(z)
    if not (np.all(np.isfinite(h0)) and np.all(np.isfinite(h1))):
        raise SpecialFunctionError("non-finite Hankel function value")
    return h0, h1


def helmholtz_slp(x, y, omega):
    """``(i/4) H0(omega |x - y|)``."""
    _, r = _separation(x, y)
    h0, _ = hankel01(omega * r)
    return 0.25j * h0


def helmholtz_dlp(x, y, n_y, omega):
    """``-(i omega / 4) H1(omega r) (y - x).n_y / r``."""
    d, r = _separation(x, y)
    n_y = np.asarray(n_y, dtype=float)
    _, h1 = hankel01(omega * r)
    dn = d[..., 0] * n_y[..., 0] + d[..., 1] * n_y[..., 1]
    return 0.25j * omega * h1 * dn / r


def combined_kernel(x, y, n_y, spec: KernelSpec):
    """``D_w + eta S_w`` with ``eta = -i omega`` unless a coupling is given."""
    if not spec.is_helmholtz:
        raise ValueError("combined_kernel needs a helmholtz-combined spec")
    return helmholtz_dlp(x, y, n_y, spec.omega) + spec.eta * helmholtz_slp(x, y, spec.omega)


def kernel(x, y, n_y, spec: KernelSpec):
    if spec.is_helmholtz:
        return combined_kernel(x, y, n_y, spec)
    return laplace_dlp(x, y, n_y)


def _kernel_rows(targets, sources, normals, spec):
    dx = targets[:, 0, None] - sources[None, :, 0]
    dy = targets[:, 1, None] - sources[None, :, 1]
    r = np.hypot(dx, dy)
    hit = r == 0
    if hit.any():
        r = np.where(hit, 1.0, r)
    dn = dx * normals[None, :, 0] + dy * normals[None, :, 1]
    if spec.is_helmholtz:
        w = spec.omega
        z = w * r
        h0, h1 = hankel01(z)
        out = 0.25j * (w * h1 * dn / r + spec.eta * h0)
    else:
        out = dn / (_TWO_PI * r * r)
    if hit.any():
        out[hit] = 0
    return out


def kernel_matrix(targets, sources, normals, spec: KernelSpec) -> np.ndarray:
    """Pairwise kernel values ``K(x_i, y_j)`` without quadrature weights.

    Coincident pairs are set to zero; assembly fills in their limits.
    Rows are processed in chunks to bound temporary memory.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    sources = np.asarray(sources, dtype=float).reshape(-1, 2)
    normals = np.asarray(normals, dtype=float).reshape(-1, 2)
    m = targets.shape[0]
    out = np.empty((m, sources.shape[0]), dtype=spec.dtype)
    step = max(1, _ROW_CHUNK * 4096 // max(sources.shape[0], 1))
    for lo in range(0, m, step):
        out[lo:lo + step] = _kernel_rows(targets[lo:lo + step], sources, normals, spec)
    return out


def kernel_matrix_pair(a_pts, a_normals, b_pts, b_normals, spec: KernelSpec):
    """``(K(a <- b), K(b <- a))`` sharing one distance and Hankel evaluation."""
    a_pts = np.asarray(a_pts, dtype=float).reshape(-1, 2)
    b_pts = np.asarray(b_pts, dtype=float).reshape(-1, 2)
    dx = a_pts[:, 0, None] - b_pts[None, :, 0]
    dy = a_pts[:, 1, None] - b_pts[None, :, 1]
    r = np.hypot(dx, dy)
    if np.any(r == 0):
        raise SingularityError("paired kernel blocks must not share points")
    dn_ab = (dx * b_normals[None, :, 0] + dy * b_normals[None, :, 1]) / r
    dn_ba = -(dx * a_normals[:, None, 0] + dy * a_normals[:, None, 1]) / r
    if spec.is_helmholtz:
        w = spec.omega
        h0, h1 = hankel01(w * r)
        s = spec.eta * h0
        h1 = w * h1
        return 0.25j * (h1 * dn_ab + s), (0.25j * (h1 * dn_ba + s)).T
    r = _TWO_PI * r
    return dn_ab / r, (dn_ba / r).T


def slp_matrix(targets, sources, spec: KernelSpec) -> np.ndarray:
    """Single-layer Green's function values for the kernel's equation (no weights)."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    sources = np.asarray(sources, dtype=float).reshape(-1, 2)
    r = np.hypot(targets[:, 0, None] - sources[None, :, 0], targets[:, 1, None] - sources[None, :, 1])
    if np.any(r == 0):
        raise SingularityError("single layer evaluated at coincident points")
    if spec.is_helmholtz:
        h0, _ = hankel01(spec.omega * r)
        return 0.25j * h0
    return -np.log(r) / _TWO_PI


def near_boundary_mask(disc, targets, factor: float = 2.0) -> np.ndarray:
    """True for targets closer than ``factor`` panel lengths to some panel."""
    from scipy.spatial import cKDTree

    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    lengths = np.repeat(disc.panel_lengths, disc.p)
    tree = cKDTree(disc.points)
    bad = np.zeros(targets.shape[0], dtype=bool)
    reach = factor * float(lengths.max())
    for i, hits in enumerate(tree.query_ball_point(targets, reach)):
        if hits:
            hits = np.asarray(hits)
            dist = np.hypot(*(disc.points[hits] - targets[i]).T)
            bad[i] = bool(np.any(dist < factor * lengths[hits]))
    return bad


def eval_potential(disc, density, targets, spec: KernelSpec, near_factor: float = 2.0,
                   check: bool = True) -> np.ndarray:
    """Layer potential ``u(x) = sum_j K(x, y_j) sigma_j w_j`` at off-surface targets.

    Raises
    ------
    NearEvaluationError
        If ``check`` and a target is within ``near_factor`` panel lengths of
        the boundary, where the smooth rule loses accuracy.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    density = np.asarray(density)
    if density.shape[0] != disc.n:
        raise ValueError(f"density has {density.shape[0]} entries, discretization has {disc.n}")
    if check and near_boundary_mask(disc, targets, near_factor).any():
        raise NearEvaluationError("target too close to the boundary for smooth quadrature")
    K = kernel_matrix(targets, disc.points, disc.normals, spec)
    return K @ (disc.weights * density)
