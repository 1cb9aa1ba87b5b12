"""End-to-end acceptance checks, one marker per criterion.

Each test records the measured values it asserted on; ``conftest.py`` prints
one PASS/FAIL line per criterion at the end of the run.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla

from perturbfds import KernelSpec, build_panels, eval_potential, sunflower
from perturbfds.extended import (build_extended_solver, dense_perturbed_system, rank_report,
                                 solve_extended)
from perturbfds.harness import load_config, run_experiment
from perturbfds.harness.experiments import build_plan, kernel_spec, run_point, verify_against_analytic
from perturbfds.hbs import DenseSolver, hbs_compress, hbs_invert
from perturbfds.kernels import hankel01
from perturbfds.lowrank import spectral_norm_estimate
from perturbfds.nystrom import SystemOperator

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
EPS = 1e-10
LAPLACE = KernelSpec.laplace()
FAMILIES = ("laplace-reshape-fixed-cut", "laplace-reshape-growing-cut", "laplace-refine")


def _config(tag, **overrides):
    return load_config(CONFIGS / f"{tag}.yaml", **overrides)


def _plan(tag, n_panels, **overrides):
    cfg = _config(tag, **overrides)
    factor = cfg.factors[0] if cfg.is_refinement else None
    return build_plan(cfg, n_panels, factor), kernel_spec(cfg), cfg


def _extended_vs_dense(plan, spec, leaf):
    op = SystemOperator(plan.original, spec)
    solver = build_extended_solver(hbs_invert(hbs_compress(op, EPS, leaf)), plan, spec,
                                   orig_operator=op)
    rng = np.random.default_rng(0)
    g = rng.standard_normal(plan.n_k + plan.n_p)
    if spec.is_helmholtz:
        g = g + 1j * rng.standard_normal(g.size)
    ref = sla.lu_solve(sla.lu_factor(dense_perturbed_system(plan, spec)), g)
    got = np.concatenate(solve_extended(solver, g[:plan.n_k], g[plan.n_k:]))
    return float(np.linalg.norm(got - ref) / np.linalg.norm(ref))


# --- 1 -------------------------------------------------------------------------------------

@pytest.mark.criterion(1, "interior Laplace on the sunflower, N_o = 6400: error <= 1e-9 in <= 60 s")
def test_bvp_accuracy_on_sunflower(record_property):
    t = time.perf_counter()
    d = build_panels(sunflower(), 400)
    inv = hbs_invert(hbs_compress(SystemOperator(d, LAPLACE), EPS, leaf_size=128))
    res = verify_against_analytic(d, inv.apply_inverse, LAPLACE, seed=0, n_points=20)
    wall = time.perf_counter() - t
    record_property("measured", f"N_o={d.n} error={res['error']:.2e} wall={wall:.1f} s")
    assert d.n == 6400 and res["n_points"] == 20
    assert res["error"] <= 1e-9
    assert wall <= 60


# --- 2 -------------------------------------------------------------------------------------

@pytest.mark.criterion(2, "extended solve equals dense perturbed solve to 1e-8 (3 families x 3 sizes)")
@pytest.mark.parametrize("n_panels", [32, 64, 128])
@pytest.mark.parametrize("tag", FAMILIES)
def test_extended_system_equivalence(tag, n_panels, record_property):
    plan, spec, cfg = _plan(tag, n_panels)
    assert plan.n_o in (512, 1024, 2048)
    err = _extended_vs_dense(plan, spec, cfg.leaf_size)
    record_property("measured", f"{tag} N_o={plan.n_o} N_c={plan.n_c} N_p={plan.n_p}: {err:.1e}")
    assert err <= 1e-8


# --- 3 -------------------------------------------------------------------------------------

@pytest.mark.criterion(3, "Woodbury solve equals dense (A_tilde + L R)^-1 g to 1e-10, N <= 512")
@pytest.mark.parametrize("formulation", ["new", "orig"])
@pytest.mark.parametrize("tag,n_panels", [("laplace-reshape-fixed-cut", 24), ("laplace-refine", 32)])
def test_woodbury_exactness(tag, n_panels, formulation, record_property):
    plan, spec, _ = _plan(tag, n_panels)
    assert plan.n_o <= 512
    A_oo = SystemOperator(plan.original, spec).dense()
    A_pp = SystemOperator(plan.new, spec).dense()
    solver = build_extended_solver(DenseSolver(A_oo), plan, spec, formulation, exact=True,
                                   pp_inv=DenseSolver(A_pp))
    At = sla.block_diag(A_oo, A_pp)
    L, R = solver.factor.dense_L(), solver.factor.dense_R()
    g = np.random.default_rng(1).standard_normal(At.shape[0])
    ref = np.linalg.solve(At + L @ R, g)
    err = float(np.linalg.norm(solver.solve_full(g) - ref) / np.linalg.norm(ref))
    record_property("measured", f"{tag} {formulation} N_o={plan.n_o}: {err:.1e}")
    assert err <= 1e-10


# --- 4, 5, 6: growing-cut sweep ------------------------------------------------------------

@pytest.fixture(scope="module")
def growing_rows():
    cfg = _config("laplace-reshape-growing-cut", repeats=3, solve_repeats=31)
    return run_experiment(cfg)


@pytest.fixture(scope="module")
def refine_rows():
    rows = {}
    for tag in ("laplace-refine", "helmholtz-refine"):
        cfg = _config(tag, factors=[2], repeats=1, warmup=False, solve_repeats=31)
        rows[tag] = run_point(cfg, build_plan(cfg, 400, 2), cfg.seed, {"factor": 2})
    return rows


@pytest.mark.criterion(4, "growing cut: k_new varies < 30%, ledger exact, k_orig - N_c bounded")
def test_rank_ledger_and_cut_independence(growing_rows, record_property):
    n_c = np.array([r["N_c"] for r in growing_rows])
    k_new = np.array([r["k_new"] for r in growing_rows])
    extra = np.array([r["k_orig"] - r["N_c"] for r in growing_rows])
    record_property("measured", f"N_c={n_c.tolist()} k_new={k_new.tolist()} "
                                f"k_orig-N_c={extra.tolist()}")
    assert n_c.tolist() == [128, 256, 512, 1024]
    assert (k_new.max() - k_new.min()) / k_new.min() < 0.30
    for r in growing_rows:
        assert r["k_new"] == r["k_kc"] + r["k_pk"] + r["k_kp"]
        assert r["k_orig"] == r["k_op"] + r["k_kc"] + r["k_pk"] + r["N_c"]
        assert r["invariants_ok"], r["checks_failed"]
    # bounded: an 8-fold longer cut raises the excess rank by at most 2.5x,
    # so its share of k_orig shrinks and k_orig grows at least linearly in N_c
    assert extra.max() / extra.min() <= 2.5
    assert np.all(np.diff(extra / n_c) < 0)


@pytest.mark.criterion(5, "r_p >= 3 (Laplace) and >= 5 (Helmholtz) at N_o = 6400; "
                          "T_orig,p / T_new,p increases with N_c")
def test_precompute_speedups(growing_rows, refine_rows, record_property):
    lap, helm = refine_rows["laplace-refine"], refine_rows["helmholtz-refine"]
    ratio = [r["T_orig_p"] / r["T_new_p"] for r in growing_rows]
    helm_ppw = 2 * np.pi * helm["N_o"] / (helm["omega"] * sunflower_perimeter())
    record_property("measured", f"r_p Laplace={lap['r_p']:.1f} Helmholtz(w={helm['omega']:g}, "
                                f"{helm_ppw:.0f} pts/wavelength)={helm['r_p']:.1f}; "
                                f"T_orig/T_new={np.round(ratio, 2).tolist()}")
    assert lap["N_o"] == helm["N_o"] == 6400
    assert helm_ppw >= 6
    assert lap["r_p"] >= 3
    assert helm["r_p"] >= 5
    assert np.all(np.diff(ratio) > 0)


@pytest.mark.criterion(6, "one extended solve costs within 2.5x of one HBS solve at every point")
def test_solve_time_parity(growing_rows, refine_rows, record_property):
    rows = list(growing_rows) + list(refine_rows.values())
    r_s = [r["r_s"] for r in rows]
    record_property("measured", f"r_s={np.round(r_s, 2).tolist()}")
    assert min(r_s) >= 1 / 2.5


def sunflower_perimeter():
    return float(build_panels(sunflower(), 400).weights.sum())


# --- 7 -------------------------------------------------------------------------------------

@pytest.mark.criterion(7, "Helmholtz w=10 on the sunflower: field error <= 1e-7 and refinement "
                          "equivalence <= 1e-7 without A_cp")
def test_helmholtz_weakly_singular_pathway(record_property):
    cfg = _config("helmholtz-refine", omega=10.0, factors=[2])
    spec = kernel_spec(cfg)
    plan = build_plan(cfg, 400, 2)
    op = SystemOperator(plan.original, spec)
    solver = build_extended_solver(hbs_invert(hbs_compress(op, EPS, cfg.leaf_size)), plan, spec,
                                   orig_operator=op)
    assert "k_op" not in rank_report(solver)

    def solve(g):
        return np.concatenate(solve_extended(solver, g[:plan.n_k], g[plan.n_k:]))

    field = verify_against_analytic(plan.perturbed(), solve, spec, seed=cfg.seed)["error"]
    small = build_plan(cfg, 100, 2)
    equiv = _extended_vs_dense(small, spec, cfg.leaf_size)
    record_property("measured", f"field error N_o={plan.n_o}: {field:.1e}; "
                                f"equivalence N_o={small.n_o}: {equiv:.1e}")
    assert field <= 1e-7
    assert equiv <= 1e-7
    with pytest.raises(NotImplementedError):
        build_extended_solver(DenseSolver(np.eye(small.n_o)), small, spec, "orig")


# --- 8 -------------------------------------------------------------------------------------

@pytest.mark.criterion(8, "invariant suites: Gauss identity, HBS residuals, partition, dummy "
                          "invariance, Wronskian; suite <= 10 min")
def test_gauss_identity_on_sunflower(record_property):
    d = build_panels(sunflower(), 256)
    assert d.n <= 4096
    c = np.asarray(sunflower().interior_point)
    inside = c + np.array([[0.05, 0.02], [-0.1, 0.0], [0.0, 0.1]])
    outside = np.array([[10.0, 0.0], [0.0, -12.0], [-9.0, 9.0]])
    ones = np.ones(d.n)
    e_in = np.abs(eval_potential(d, ones, inside, LAPLACE) + 1).max()
    e_out = np.abs(eval_potential(d, ones, outside, LAPLACE)).max()
    record_property("measured", f"Gauss identity: inside {e_in:.1e}, outside {e_out:.1e}")
    assert e_in <= 1e-10 and e_out <= 1e-10


@pytest.mark.criterion(8, "invariant suites")
@pytest.mark.parametrize("n,spec", [(200, LAPLACE), (200, KernelSpec.helmholtz(10.0))],
                         ids=["laplace", "helmholtz"])
def test_hbs_residuals(n, spec, record_property):
    op = SystemOperator(build_panels(sunflower(), n), spec)
    assert op.n <= 4096
    tree = hbs_compress(op, EPS, leaf_size=128)
    inv = hbs_invert(tree)
    A = op.dense()
    rng = np.random.default_rng(3)
    x = rng.standard_normal(op.n) + (1j * rng.standard_normal(op.n) if spec.is_helmholtz else 0)
    nx = np.linalg.norm(x)
    nA = spectral_norm_estimate(lambda X: A @ X, lambda Y: A.conj().T @ Y, op.n)
    apply_res = np.linalg.norm(tree.apply(x) - A @ x) / (nA * nx)
    inv_res = np.linalg.norm(inv.apply_inverse(A @ x) - x) / nx
    record_property("measured", f"HBS {spec.equation} N={op.n}: apply {apply_res:.1e}, "
                                f"inverse {inv_res:.1e}")
    assert apply_res <= 10 * EPS and inv_res <= 10 * EPS


@pytest.mark.criterion(8, "invariant suites")
@pytest.mark.parametrize("tag", FAMILIES + ("helmholtz-refine",))
def test_plan_partition(tag):
    cfg = _config(tag)
    for n in cfg.n_panels:
        for f in (cfg.factors if cfg.is_refinement else [None]):
            plan = build_plan(cfg, n, f)
            plan.check()
            both = np.sort(np.concatenate([plan.kept, plan.cut]))
            assert np.array_equal(both, np.arange(plan.n_o))
            assert plan.n_k == plan.n_o - plan.n_c


@pytest.mark.criterion(8, "invariant suites")
def test_dummy_invariance(record_property):
    plan, spec, _ = _plan("laplace-refine", 32)
    A = SystemOperator(plan.original, spec).dense()
    rng = np.random.default_rng(4)
    g = rng.standard_normal(plan.n_k + plan.n_p)
    base = np.concatenate(solve_extended(build_extended_solver(DenseSolver(A), plan, spec),
                                         g[:plan.n_k], g[plan.n_k:]))
    c = plan.cut
    worst = 0.0
    for _ in range(3):
        sub = A.copy()
        sub[np.ix_(c, c)] = rng.standard_normal((c.size, c.size)) + 4 * np.sqrt(c.size) * np.eye(c.size)
        got = np.concatenate(solve_extended(build_extended_solver(DenseSolver(sub), plan, spec),
                                            g[:plan.n_k], g[plan.n_k:]))
        worst = max(worst, np.linalg.norm(got - base) / np.linalg.norm(base))
    record_property("measured", f"dummy invariance: {worst:.1e}")
    assert worst <= 1e-8


@pytest.mark.criterion(8, "invariant suites")
def test_hankel_wronskian(record_property):
    z = np.geomspace(1e-3, 1e3, 4001)
    h0, h1 = hankel01(z)
    w = h1.real * h0.imag - h0.real * h1.imag
    err = float(np.abs(w * np.pi * z / 2 - 1).max())
    record_property("measured", f"Wronskian J1 Y0 - J0 Y1 = 2/(pi z): {err:.1e}")
    assert err <= 1e-12
