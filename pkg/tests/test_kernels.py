import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from perturbfds import KernelSpec, build_panels, circle, ellipse, eval_potential, star, sunflower
from perturbfds.errors import NearEvaluationError, SingularityError
from perturbfds.kernels import (combined_kernel, hankel01, helmholtz_dlp, helmholtz_slp, kernel,
                                kernel_matrix, kernel_matrix_pair, laplace_dlp, laplace_green,
                                near_boundary_mask)

# H0, H1 of the first kind from mpmath at 40 digits.
HANKEL_TABLE = [
    (0.1, 0.99750156206604 - 1.5342386513503667j, 0.049937526036242 - 6.4589510947020266j),
    (1.0, 0.7651976865579666 + 0.08825696421567696j, 0.4400505857449335 - 0.7812128213002887j),
    (2.5, -0.048383776468198 + 0.4980703596152319j, 0.49709410246427405 + 0.1459181379667858j),
    (10.0, -0.24593576445134835 + 0.055671167283599395j,
     0.04347274616886144 + 0.24901542420695388j),
    (100.0, 0.019985850304223122 - 0.07724431336508315j,
     -0.07714535201411216 - 0.020372312002759792j),
]


def test_laplace_green_values():
    assert laplace_green([0, 0], [1, 0]) == 0.0
    r = np.exp(-2 * np.pi)
    assert abs(laplace_green([0, 0], [r, 0]) - 1.0) < 1e-14


def test_coincident_points_raise():
    with pytest.raises(SingularityError):
        laplace_green([1, 2], [1, 2])
    with pytest.raises(SingularityError):
        laplace_dlp([1, 2], [1, 2], [0, 1])
    with pytest.raises(SingularityError):
        helmholtz_slp([0, 0], [0, 0], 3.0)


def test_laplace_dlp_center_of_circle():
    th = np.linspace(0, 2 * np.pi, 7)
    y = np.column_stack([np.cos(th), np.sin(th)])
    assert np.allclose(laplace_dlp(np.zeros(2), y, y), -1 / (2 * np.pi), atol=1e-15)


def test_laplace_dlp_is_normal_derivative():
    x, y, n = np.array([0.3, -0.2]), np.array([1.1, 0.4]), np.array([0.6, 0.8])
    exact = laplace_dlp(x, y, n)
    errs = []
    for h in (1e-2, 5e-3):
        fd = (laplace_green(x, y + h * n) - laplace_green(x, y - h * n)) / (2 * h)
        errs.append(abs(fd - exact))
    assert errs[1] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_helmholtz_dlp_is_normal_derivative():
    w, x, y, n = 4.0, np.array([0.1, 0.2]), np.array([0.9, -0.5]), np.array([0.8, -0.6])
    h = 1e-4
    fd = (helmholtz_slp(x, y + h * n, w) - helmholtz_slp(x, y - h * n, w)) / (2 * h)
    assert abs(fd - helmholtz_dlp(x, y, n, w)) < 1e-7


def test_symmetry_of_green():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 50, 2))
    assert np.array_equal(laplace_green(x, y), laplace_green(y, x))
    assert np.allclose(helmholtz_slp(x, y, 3.0), helmholtz_slp(y, x, 3.0), rtol=0, atol=1e-15)


@pytest.mark.parametrize("z,h0,h1", HANKEL_TABLE)
def test_hankel_against_multiprecision_table(z, h0, h1):
    a, b = hankel01(z)
    assert abs(a - h0) <= 1e-12 * abs(h0)
    assert abs(b - h1) <= 1e-12 * abs(h1)


def test_hankel_accuracy_over_range():
    mpmath.mp.dps = 30
    zs = np.geomspace(1e-6, 1e4, 60)
    h0, h1 = hankel01(zs)
    for z, a, b in zip(zs, h0, h1):
        r0 = complex(mpmath.hankel1(0, mpmath.mpf(z)))
        r1 = complex(mpmath.hankel1(1, mpmath.mpf(z)))
        assert abs(a - r0) <= 1e-12 * abs(r0)
        assert abs(b - r1) <= 1e-12 * abs(r1)


def test_bessel_wronskian():
    z = np.linspace(0.1, 100, 2001)
    w = special.j1(z) * special.y0(z) - special.j0(z) * special.y1(z)
    assert np.abs(w / (2 / (np.pi * z)) - 1).max() < 1e-12


def test_small_argument_log_coefficient():
    # Re (i/4) H0(w r) = -Y0(w r)/4 ~ -(1/2pi)(log(w r/2) + gamma)
    w = 2.0
    for r in (1e-4, 1e-6):
        val = helmholtz_slp([0, 0], [r, 0], w).real
        series = -(np.log(w * r / 2) + np.euler_gamma) / (2 * np.pi)
        assert abs(val - series) < 1e-6
        # same log coefficient as the Laplace kernel
        diff = val - laplace_green([0, 0], [r, 0])
        assert abs(diff + (np.log(w / 2) + np.euler_gamma) / (2 * np.pi)) < 1e-6


def test_far_field_decay():
    w = 2.0
    r = 1e3 / w
    val = abs(helmholtz_slp([0, 0], [r, 0], w))
    assert abs(val / (8 * np.pi * w * r) ** -0.5 - 1) < 0.01


def test_dlp_low_frequency_limit():
    x, y, n = np.array([0.0, 0.0]), np.array([0.6, 0.8]), np.array([0.6, 0.8])
    w = 1e-4  # w r = 1e-4
    assert abs(helmholtz_dlp(x, y, n, w) - laplace_dlp(x, y, n)) <= 1e-6 * abs(laplace_dlp(x, y, n))


def test_combined_is_dlp_plus_coupled_slp():
    spec = KernelSpec.helmholtz(7.0)
    x, y, n = np.array([0.1, 0.2]), np.array([1.0, -0.3]), np.array([0.0, 1.0])
    expect = helmholtz_dlp(x, y, n, 7.0) + (-7.0j) * helmholtz_slp(x, y, 7.0)
    assert combined_kernel(x, y, n, spec) == expect


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec.helmholtz(0.0)
    with pytest.raises(ValueError):
        KernelSpec("stokes")
    assert KernelSpec.laplace().jump == -0.5
    assert KernelSpec.helmholtz(1.0).jump == 0.5
    assert KernelSpec.helmholtz(2.0, coupling=3.0).eta == 3.0


def test_helmholtz_equation_residual():
    w, y, x0 = 5.0, np.array([0.0, 0.0]), np.array([0.7, 0.4])
    errs = []
    for h in (2e-2, 1e-2):
        pts = x0 + h * np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])
        s = helmholtz_slp(pts, y, w)
        lap = (s[1:].sum() - 4 * s[0]) / h**2
        errs.append(abs(lap + w * w * s[0]))
    assert 3.5 < errs[0] / errs[1] < 4.5


@settings(max_examples=30, deadline=None)
@given(angle=st.floats(0, 2 * np.pi), shift=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
       seed=st.integers(0, 1000))
def test_rigid_motion_invariance(angle, shift, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (2, 2))
    if np.linalg.norm(x - y) < 1e-3:
        return
    n = rng.standard_normal(2)
    n /= np.linalg.norm(n)
    Q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    b = np.asarray(shift)
    mx, my, mn = Q @ x + b, Q @ y + b, Q @ n
    spec = KernelSpec.helmholtz(3.0)
    assert abs(laplace_dlp(x, y, n) - laplace_dlp(mx, my, mn)) < 1e-11
    assert abs(combined_kernel(x, y, n, spec) - combined_kernel(mx, my, mn, spec)) < 1e-11


def test_kernel_matrix_matches_pointwise():
    d = build_panels(star(), 4)
    pts = np.array([[3.0, 0.5], [0.1, -0.2]])
    for spec in (KernelSpec.laplace(), KernelSpec.helmholtz(6.0)):
        K = kernel_matrix(pts, d.points, d.normals, spec)
        ref = kernel(pts[:, None, :], d.points[None], d.normals[None], spec)
        assert np.abs(K - ref).max() < 1e-14


def test_kernel_matrix_pair_transposes():
    a = build_panels(circle(0.5), 2)
    b = build_panels(ellipse(2.0, 1.5), 3)
    spec = KernelSpec.helmholtz(2.0)
    ab, ba = kernel_matrix_pair(a.points, a.normals, b.points, b.normals, spec)
    assert np.abs(ab - kernel_matrix(a.points, b.points, b.normals, spec)).max() < 1e-14
    assert np.abs(ba - kernel_matrix(b.points, a.points, a.normals, spec)).max() < 1e-14


@pytest.mark.parametrize("curve,n", [(circle(), 64), (ellipse(1.0, 0.4), 128), (star(), 160),
                                     (sunflower(), 400)])
def test_gauss_identity(curve, n):
    d = build_panels(curve, n)
    c = np.asarray(curve.interior_point)
    inside = c + np.array([[0.02, 0.01], [-0.03, 0.0]])
    outside = c + np.array([[4.0, 0.0], [0.0, -5.0]])
    ones = np.ones(d.n)
    spec = KernelSpec.laplace()
    assert np.abs(eval_potential(d, ones, inside, spec) + 1).max() < 1e-10
    assert np.abs(eval_potential(d, ones, outside, spec)).max() < 1e-10


def test_zero_density_zero_field():
    d = build_panels(circle(), 64)
    out = eval_potential(d, np.zeros(d.n), [[0.1, 0.1]], KernelSpec.helmholtz(2.0))
    assert np.all(out == 0)


def test_near_targets_rejected():
    d = build_panels(circle(), 64)
    assert near_boundary_mask(d, [[0.99, 0.0], [0.0, 0.0]]).tolist() == [True, False]
    with pytest.raises(NearEvaluationError):
        eval_potential(d, np.ones(d.n), [[0.99, 0.0]], KernelSpec.laplace())
    with pytest.raises(ValueError):
        eval_potential(d, np.ones(3), [[0.0, 0.0]], KernelSpec.laplace())
