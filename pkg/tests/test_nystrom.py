import mpmath
import numpy as np
import pytest
import scipy.linalg as sla
from scipy import integrate

from perturbfds import (KernelSpec, build_panels, circle, ellipse, eval_potential,
                        make_refinement_plan, squircle, star, sunflower)
from perturbfds.geometry import gauss_legendre
from perturbfds.kernels import hankel01, kernel, laplace_green
from perturbfds.nystrom import (SystemOperator, assemble_block, assemble_system, barycentric_matrix,
                                laplace_dlp_diagonal, log_weights, quadrature_corrections)

LAPLACE = KernelSpec.laplace()


def _log_moment(u, k):
    """int_{-1}^{1} log|t - u| t^k dt by adaptive quadrature split at the singularity."""
    f = lambda t: np.log(abs(t - u)) * t**k
    return sum(integrate.quad(f, a, b, limit=200, epsabs=1e-15, epsrel=1e-14)[0]
               for a, b in ((-1, u), (u, 1)))


def test_log_weights_row_sums_closed_form():
    u, _ = gauss_legendre(16)
    exact = (1 + u) * np.log(1 + u) + (1 - u) * np.log(1 - u) - 2
    assert np.abs(log_weights(16).sum(axis=1) - exact).max() < 1e-14


@pytest.mark.parametrize("p,k", [(16, 3), (16, 10), (8, 5)])
def test_log_weights_integrate_monomials(p, k):
    u, _ = gauss_legendre(p)
    got = log_weights(p) @ u**k
    ref = np.array([_log_moment(ui, k) for ui in u])
    assert np.abs(got - ref).max() < 1e-12


def test_barycentric_reproduces_polynomials():
    u, _ = gauss_legendre(16)
    x = np.linspace(-1, 1, 33)
    P = barycentric_matrix(u, x)
    for k in (0, 7, 15):
        assert np.abs(P @ u**k - x**k).max() < 1e-13
    assert np.array_equal(barycentric_matrix(u, u[:3]), np.eye(16)[:3])


def test_circle_dlp_matrix_is_constant():
    d = build_panels(circle(), 8)
    K = assemble_block(d, d, LAPLACE)
    assert np.abs(K - (-1 / (4 * np.pi)) * d.weights[None, :]).max() < 1e-14


def test_circle_constant_data():
    d = build_panels(circle(), 8)
    A = assemble_system(d, LAPLACE)
    sigma = np.linalg.solve(A, 3.0 * np.ones(d.n))
    assert np.abs(sigma + 3.0).max() < 1e-13


@pytest.mark.parametrize("curve,n", [(ellipse(1, 0.4), 32), (star(), 48), (squircle(), 32)])
def test_constant_density_principal_value(curve, n):
    d = build_panels(curve, n)
    K = assemble_block(d, d, LAPLACE)
    assert np.abs(K.sum(axis=1) + 0.5).max() < 1e-10


def test_diagonal_limit_circle_and_flat():
    d = build_panels(circle(), 4)
    assert np.allclose(laplace_dlp_diagonal(d), -d.weights / (4 * np.pi), rtol=1e-14)
    vals = []
    for R in (10.0, 100.0, 1000.0):
        big = build_panels(circle(R), 4)
        vals.append(laplace_dlp_diagonal(big, 0) / big.weights[0])
    assert np.allclose(np.array(vals) * np.array([10.0, 100.0, 1000.0]), -1 / (4 * np.pi))


def test_diagonal_limit_ellipse_approach_oracle():
    c = ellipse(1.0, 0.4)
    d = build_panels(c, 8)
    i = 37
    t0 = d.t[i]
    x = d.points[i]

    def along(h):
        y, n, _, _ = c.frame(np.array([t0 + h]))
        return kernel(x, y[0], n[0], LAPLACE)

    # Richardson on the symmetric approach removes the O(h) term
    h = 1e-3
    sym = lambda h: 0.5 * (along(h) + along(-h))
    limit = (4 * sym(h / 2) - sym(h)) / 3
    assert abs(limit - laplace_dlp_diagonal(d, i) / d.weights[i]) < 1e-8


def test_laplace_corrections_only_diagonal():
    d = build_panels(star(), 12)
    C = quadrature_corrections(d.points, d, LAPLACE)
    assert C.nnz == d.n
    assert np.array_equal(C.diagonal(), laplace_dlp_diagonal(d))


def test_block_consistency_with_slices():
    d = build_panels(star(), 24)
    plan = make_refinement_plan(d, [5, 6, 7], 2)
    for spec in (LAPLACE, KernelSpec.helmholtz(8.0)):
        op = SystemOperator(d, spec)
        A = op.dense()
        k, c = plan.kept, plan.cut
        assert np.array_equal(A[np.ix_(k, c)], assemble_block(d, d, spec, src_idx=c, trg_idx=k))
        assert np.array_equal(A[np.ix_(c, k)], assemble_block(d, d, spec, src_idx=k, trg_idx=c))
        Acc = assemble_block(d, d, spec, src_idx=c, trg_idx=c) + spec.jump * np.eye(c.size)
        assert np.array_equal(A[np.ix_(c, c)], Acc)


def _ellipse_kernel_mp(a, b, w, ti, tau):
    """Combined kernel times speed on an ellipse, with x(ti) - y(ti + tau) formed without cancellation."""
    h = tau / 2
    d = [2 * a * mpmath.sin(ti + h) * mpmath.sin(h), -2 * b * mpmath.cos(ti + h) * mpmath.sin(h)]
    dy = [-a * mpmath.sin(ti + tau), b * mpmath.cos(ti + tau)]
    s = mpmath.sqrt(dy[0] ** 2 + dy[1] ** 2)
    dn = (d[0] * dy[1] - d[1] * dy[0]) / s
    r = mpmath.sqrt(d[0] ** 2 + d[1] ** 2)
    dlp = 0.25j * w * mpmath.hankel1(1, w * r) * dn / r
    return (dlp + (-1j * w) * 0.25j * mpmath.hankel1(0, w * r)) * s


def test_helmholtz_self_panel_against_multiprecision():
    a_, b_, w = 1.0, 0.6, 7.0
    d = build_panels(ellipse(a_, b_), 12)
    A = assemble_block(d, d, KernelSpec.helmholtz(w))
    idx = d.panel_nodes(2)
    a, b = (float(v) for v in d.panel_bounds[2])
    dens = np.cos(3 * d.t[idx]) + d.t[idx] ** 2
    u, _ = gauss_legendre(16)
    mpmath.mp.dps = 20
    for i in idx[[0, 7, 15]]:
        ti = float(d.t[i])

        def f(tau):
            # the rule integrates the degree-15 interpolant of the density
            interp = barycentric_matrix(u, [(2 * (ti + float(tau)) - a - b) / (b - a)]) @ dens
            return _ellipse_kernel_mp(a_, b_, w, mpmath.mpf(ti), tau) * float(interp[0])

        ref = complex(mpmath.quad(f, [a - ti, 0, b - ti]))
        assert abs(A[i, idx] @ dens - ref) < 1e-13


def test_helmholtz_near_panel_against_adaptive_quadrature():
    c = circle()
    d = build_panels(c, 12)
    spec = KernelSpec.helmholtz(5.0)
    j = 4
    idx = d.panel_nodes(j)
    a, b = d.panel_bounds[j]
    L = d.panel_lengths[j]
    tm = 0.3 * a + 0.7 * b
    X = np.array([[np.cos(tm), np.sin(tm)]]) * np.array([[1 + 0.05 * L], [1 - 0.2 * L]])
    M = assemble_block(d, X, spec, src_idx=idx)
    u, _ = gauss_legendre(16)
    dens = u**5 - u
    for q, x in enumerate(X):
        def integrand(t, part):
            y = np.array([np.cos(t), np.sin(t)])
            uu = (2 * t - a - b) / (b - a)
            val = kernel(x, y, y, spec) * (uu**5 - uu)
            return val.real if part == 0 else val.imag

        ref = complex(*(integrate.quad(integrand, a, b, args=(part,), points=[tm], limit=400,
                                       epsabs=1e-14, epsrel=1e-13)[0] for part in (0, 1)))
        assert abs(M[q] @ dens - ref) < 1e-11


def test_target_on_panel_off_nodes_is_rejected():
    d = build_panels(circle(), 8)
    plan = make_refinement_plan(d, [2], 2)
    with pytest.raises(ValueError):
        assemble_block(plan.new, d.points[plan.cut], KernelSpec.helmholtz(3.0))


def test_helmholtz_green_identity_converges():
    # exterior Green identity for u = G_w(., s), s inside: D u - S du/dn = u / 2 on the curve
    c = ellipse(1.0, 0.6)
    w, s = 10.0, np.array([0.2, 0.1])
    res = []
    for n in (4, 8, 16):
        d = build_panels(c, n)
        D = assemble_block(d, d, KernelSpec.helmholtz(w, coupling=0.0))
        S = assemble_block(d, d, KernelSpec.helmholtz(w, coupling=1.0)) - D
        r = d.points - s
        R = np.hypot(*r.T)
        h0, h1 = hankel01(w * R)
        u = 0.25j * h0
        dudn = -0.25j * w * h1 * np.einsum("ij,ij->i", r, d.normals) / R
        res.append(np.abs(D @ u - S @ dudn - 0.5 * u).max())
    for a, b in zip(res, res[1:]):
        assert b <= max(a / 10, 1e-10)
    assert res[-1] < 1e-10


def test_laplace_bvp_matches_point_charges():
    c = star()
    d = build_panels(c, 96)
    assert d.n <= 2048
    src = np.array([[3.0, 0.5], [-2.5, 2.0]])
    q = np.array([1.0, -1.0])
    g = sum(qi * laplace_green(d.points, si) for si, qi in zip(src, q))
    sigma = sla.lu_solve(sla.lu_factor(assemble_system(d, LAPLACE)), g)
    pts = np.array([[0.1, 0.05], [-0.2, 0.1], [0.0, -0.25]])
    exact = sum(qi * laplace_green(pts, si) for si, qi in zip(src, q))
    u = eval_potential(d, sigma, pts, LAPLACE)
    assert np.abs(u - exact).max() / np.abs(exact).max() < 1e-10


@pytest.mark.parametrize("curve,n", [(circle(), 16), (ellipse(1, 0.5), 32), (star(), 64),
                                     (squircle(), 32), (sunflower(), 240)])
@pytest.mark.parametrize("spec", [LAPLACE, KernelSpec.helmholtz(5.0)], ids=["laplace", "helmholtz"])
def test_systems_are_well_conditioned(curve, n, spec):
    A = assemble_system(build_panels(curve, n), spec)
    lu, piv = sla.lu_factor(A)
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, np.linalg.norm(A, 1), norm="1")
    assert info == 0
    assert 1 / rcond < 1e6


def test_system_operator_entries_and_matvec():
    d = build_panels(squircle(), 8)
    op = SystemOperator(d, KernelSpec.helmholtz(3.0))
    A = op.dense()
    I, J = np.array([3, 50, 17]), np.array([17, 3, 100, 101])
    assert np.array_equal(op.entries(I, J), A[np.ix_(I, J)])
    x = np.random.default_rng(1).standard_normal(d.n)
    assert np.allclose(op.matvec(x), A @ x, rtol=0, atol=1e-13)
