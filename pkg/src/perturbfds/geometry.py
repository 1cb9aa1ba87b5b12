"""Closed parameterized curves, composite Gauss-Legendre panels and perturbation plans.

Every boundary is sampled panel by panel: the parameter interval of a curve is
split into equal pieces and each piece carries a ``p``-point Gauss-Legendre
rule. Quadrature weights already include the speed ``|x'(t)|`` so that
``sum(w * f)`` approximates an arc-length integral.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GeometryMismatchError, InvalidCurveError, PlanError

TWO_PI = 2.0 * np.pi
SUPPORTED_ORDERS = (8, 16)
ENDPOINT_TOL = 1e-12


@functools.lru_cache(maxsize=None)
def gauss_legendre(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``p``-point Gauss-Legendre rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(p)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class Curve:
    """Smooth parameterized curve ``t -> (x(t), y(t))``.

    The three callables map a 1D parameter array of length ``n`` to ``(n, 2)``
    arrays. ``radial`` holds ``(r, r', r'')`` for curves given in polar form
    about ``center``; it is what :func:`with_bump` perturbs.
    """

    position: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]
    t_range: tuple[float, float] = (0.0, TWO_PI)
    closed: bool = True
    name: str = "curve"
    interior_point: tuple[float, float] = (0.0, 0.0)
    radial: Optional[tuple[Callable, Callable, Callable]] = field(default=None, repr=False)
    center: tuple[float, float] = (0.0, 0.0)

    def __call__(self, t) -> np.ndarray:
        return self.position(np.atleast_1d(np.asarray(t, dtype=float)))

    def segment(self, t0: float, t1: float) -> "Curve":
        """The same parameterization restricted to ``[t0, t1]`` (an open arc)."""
        if not t1 > t0:
            raise InvalidCurveError(f"segment needs t1 > t0, got [{t0}, {t1}]")
        return replace(self, t_range=(float(t0), float(t1)), closed=False)

    def frame(self, t):
        """Points, unit outward normals, speed and signed curvature at ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = self.position(t)
        dx = self.derivative(t)
        ddx = self.second_derivative(t)
        speed = np.hypot(dx[:, 0], dx[:, 1])
        if np.any(~np.isfinite(speed)) or np.any(speed <= 1e-14 * max(1.0, float(speed.max(initial=0.0)))):
            raise InvalidCurveError(f"{self.name}: zero or non-finite speed in parameterization")
        # counterclockwise orientation: outward normal is the tangent rotated by -90 degrees
        normals = np.column_stack([dx[:, 1], -dx[:, 0]]) / speed[:, None]
        curvature = (dx[:, 0] * ddx[:, 1] - dx[:, 1] * ddx[:, 0]) / speed**3
        return x, normals, speed, curvature


def polar_curve(r, dr, ddr, center=(0.0, 0.0), name="polar") -> Curve:
    """Curve ``c + r(t) (cos t, sin t)`` from ``r`` and its first two derivatives."""
    cx, cy = float(center[0]), float(center[1])

    def position(t):
        rt = r(t)
        return np.column_stack([cx + rt * np.cos(t), cy + rt * np.sin(t)])

    def derivative(t):
        rt, d1 = r(t), dr(t)
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([d1 * c - rt * s, d1 * s + rt * c])

    def second_derivative(t):
        rt, d1, d2 = r(t), dr(t), ddr(t)
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([(d2 - rt) * c - 2 * d1 * s, (d2 - rt) * s + 2 * d1 * c])

    return Curve(position, derivative, second_derivative, name=name,
                 interior_point=(cx, cy), radial=(r, dr, ddr), center=(cx, cy))


def circle(radius: float = 1.0, center=(0.0, 0.0)) -> Curve:
    radius = float(radius)
    return polar_curve(lambda t: np.full_like(t, radius), np.zeros_like, np.zeros_like,
                       center=center, name=f"circle(r={radius:g})")


def star(radius: float = 1.0, amplitude: float = 0.3, frequency: int = 5,
         center=(0.0, 0.0)) -> Curve:
    """Star-shaped curve ``r(t) = R (1 + a sin(f t))``."""
    R, a, f = float(radius), float(amplitude), int(frequency)
    return polar_curve(
        lambda t: R * (1.0 + a * np.sin(f * t)),
        lambda t: R * a * f * np.cos(f * t),
        lambda t: -R * a * f * f * np.sin(f * t),
        center=center, name=f"star(R={R:g},a={a:g},f={f})",
    )


def sunflower() -> Curve:
    """The 30-petal curve ``r(t) = 1 + 0.3 sin(30 t)``."""
    curve = star(1.0, 0.3, 30)
    return replace(curve, name="sunflower")


def squircle(center=(0.0, 0.0)) -> Curve:
    """Analytic rounded square ``r(t) = ((3 + cos 4t) / 4)^(-1/4)``.

    Equivalent to ``(cos^4 t + sin^4 t)^(-1/4)``; side midpoints sit at
    ``t = k pi / 2`` with ``r = 1``.
    """

    def f(t):
        return 0.25 * (3.0 + np.cos(4 * t))

    def r(t):
        return f(t) ** -0.25

    def dr(t):
        return -0.25 * f(t) ** -1.25 * -np.sin(4 * t)

    def ddr(t):
        ft, d1, d2 = f(t), -np.sin(4 * t), -4.0 * np.cos(4 * t)
        return (5.0 / 16.0) * ft ** -2.25 * d1**2 - 0.25 * ft ** -1.25 * d2

    return polar_curve(r, dr, ddr, center=center, name="squircle")


def ellipse(a: float = 1.0, b: float = 0.5, center=(0.0, 0.0)) -> Curve:
    a, b = float(a), float(b)
    cx, cy = float(center[0]), float(center[1])
    return Curve(
        lambda t: np.column_stack([cx + a * np.cos(t), cy + b * np.sin(t)]),
        lambda t: np.column_stack([-a * np.sin(t), b * np.cos(t)]),
        lambda t: np.column_stack([-a * np.cos(t), -b * np.sin(t)]),
        name=f"ellipse(a={a:g},b={b:g})", interior_point=(cx, cy), center=(cx, cy),
    )


def with_bump(curve: Curve, t_a: float, t_b: float, height: float, order: int = 8) -> Curve:
    """Add the radial bump ``height * (1 - s^2)^order`` on ``[t_a, t_b]``.

    ``s`` maps the interval to [-1, 1]; outside it the curve is untouched, so
    the perturbed curve agrees with ``curve`` to ``order - 1`` derivatives at
    the interval ends. Only polar curves can be bumped.
    """
    if curve.radial is None:
        raise InvalidCurveError("with_bump needs a curve given in polar form")
    if not t_b > t_a:
        raise InvalidCurveError("bump interval must satisfy t_b > t_a")
    r0, dr0, ddr0 = curve.radial
    half = 0.5 * (t_b - t_a)
    mid = 0.5 * (t_a + t_b)
    h, m = float(height), int(order)

    def local(t):
        # parameter relative to the bump start, folded into one period
        tt = t_a + np.mod(t - t_a, TWO_PI)
        s = (tt - mid) / half
        inside = np.abs(s) < 1.0
        return np.where(inside, s, 1.0), inside

    def b0(t):
        s, inside = local(t)
        return np.where(inside, h * (1 - s * s) ** m, 0.0)

    def b1(t):
        s, inside = local(t)
        return np.where(inside, h * m * (1 - s * s) ** (m - 1) * (-2 * s) / half, 0.0)

    def b2(t):
        s, inside = local(t)
        q = 1 - s * s
        val = h * m * ((m - 1) * q ** (m - 2) * 4 * s * s - 2 * q ** (m - 1)) / half**2
        return np.where(inside, val, 0.0)

    bumped = polar_curve(lambda t: r0(t) + b0(t), lambda t: dr0(t) + b1(t),
                         lambda t: ddr0(t) + b2(t), center=curve.center,
                         name=f"{curve.name}+bump(h={h:g})")
    return replace(bumped, interior_point=curve.interior_point)


@dataclass(frozen=True, eq=False)
class Discretization:
    """Nodes of a composite Gauss-Legendre rule on one or more curve pieces.

    Arrays are indexed by node; ``panel_bounds[j]`` is the parameter interval
    of panel ``j`` on curve ``curves[panel_curve[j]]``.
    """

    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    speed: np.ndarray
    curvature: np.ndarray
    panel_bounds: np.ndarray
    panel_curve: np.ndarray
    curves: tuple
    p: int = 16

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def n_panels(self) -> int:
        return self.panel_bounds.shape[0]

    @property
    def panel(self) -> np.ndarray:
        """Panel id of every node."""
        return np.repeat(np.arange(self.n_panels), self.p)

    @property
    def panel_lengths(self) -> np.ndarray:
        return self.weights.reshape(-1, self.p).sum(axis=1)

    @property
    def local_speed(self) -> np.ndarray:
        """``|dx/du|`` with ``u`` the panel-local parameter in [-1, 1]."""
        half = 0.5 * (self.panel_bounds[:, 1] - self.panel_bounds[:, 0])
        return self.speed * np.repeat(half, self.p)

    def panel_nodes(self, j: int) -> np.ndarray:
        return np.arange(j * self.p, (j + 1) * self.p)

    def nodes_of(self, panel_ids) -> np.ndarray:
        ids = np.asarray(panel_ids, dtype=int)
        return (ids[:, None] * self.p + np.arange(self.p)).ravel()

    def take_panels(self, panel_ids) -> "Discretization":
        """Sub-discretization made of whole panels, in the order given."""
        ids = np.asarray(panel_ids, dtype=int)
        idx = self.nodes_of(ids)
        return Discretization(self.t[idx], self.points[idx], self.normals[idx],
                              self.weights[idx], self.speed[idx], self.curvature[idx],
                              self.panel_bounds[ids], self.panel_curve[ids], self.curves, self.p)

    @staticmethod
    def concatenate(*parts: "Discretization") -> "Discretization":
        if not parts:
            raise ValueError("nothing to concatenate")
        p = parts[0].p
        if any(d.p != p for d in parts):
            raise ValueError("cannot concatenate discretizations with different panel orders")
        curves: list = []
        panel_curve = []
        for d in parts:
            remap = []
            for c in d.curves:
                for k, known in enumerate(curves):
                    if known is c:
                        remap.append(k)
                        break
                else:
                    curves.append(c)
                    remap.append(len(curves) - 1)
            panel_curve.append(np.asarray(remap, dtype=int)[d.panel_curve])

        def cat(name):
            return np.concatenate([getattr(d, name) for d in parts])

        return Discretization(cat("t"), cat("points"), cat("normals"), cat("weights"),
                              cat("speed"), cat("curvature"), cat("panel_bounds"),
                              np.concatenate(panel_curve), tuple(curves), p)


def _panelize(curve: Curve, bounds: np.ndarray, p: int) -> Discretization:
    if p not in SUPPORTED_ORDERS:
        raise ValueError(f"p must be one of {SUPPORTED_ORDERS}, got {p}")
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    u, g = gauss_legendre(p)
    half = 0.5 * (bounds[:, 1] - bounds[:, 0])
    mid = 0.5 * (bounds[:, 1] + bounds[:, 0])
    t = (mid[:, None] + half[:, None] * u[None, :]).ravel()
    x, normals, speed, curvature = curve.frame(t)
    weights = np.tile(g, bounds.shape[0]) * np.repeat(half, p) * speed
    return Discretization(t, x, normals, weights, speed, curvature, bounds,
                          np.zeros(bounds.shape[0], dtype=int), (curve,), p)


def build_panels(curve: Curve, n_panels: int, p: int = 16) -> Discretization:
    """Split ``curve.t_range`` into ``n_panels`` equal intervals with ``p`` Gauss nodes each."""
    n_panels = int(n_panels)
    if curve.closed and n_panels < 2:
        raise ValueError("a closed curve needs at least 2 panels")
    if n_panels < 1:
        raise ValueError("n_panels must be positive")
    t0, t1 = curve.t_range
    if curve.closed:
        gap = np.linalg.norm(curve(t0) - curve(t1))
        if gap > 1e-10:
            raise InvalidCurveError(f"{curve.name} is flagged closed but x(t0) != x(t1) (gap {gap:.2e})")
    edges = np.linspace(t0, t1, n_panels + 1)
    return _panelize(curve, np.column_stack([edges[:-1], edges[1:]]), p)


@dataclass(frozen=True, eq=False)
class PerturbationPlan:
    """Which nodes of the original boundary are kept or cut, and what replaces the cut.

    ``kept`` lists node indices of ``original`` in curve order starting right
    after the cut, so ``kept`` followed by ``new`` runs once around the
    perturbed boundary.
    """

    original: Discretization
    kept: np.ndarray
    cut: np.ndarray
    new: Discretization
    kind: str
    kept_panels: np.ndarray
    cut_panels: np.ndarray

    @property
    def n_o(self) -> int:
        return self.original.n

    @property
    def n_c(self) -> int:
        return self.cut.size

    @property
    def n_k(self) -> int:
        return self.kept.size

    @property
    def n_p(self) -> int:
        return self.new.n

    @property
    def is_refinement(self) -> bool:
        return self.kind == "refinement"

    def kept_discretization(self) -> Discretization:
        return self.original.take_panels(self.kept_panels)

    def perturbed(self) -> Discretization:
        """Discretization of the new boundary: kept panels followed by the new piece."""
        return Discretization.concatenate(self.kept_discretization(), self.new)

    def check(self) -> None:
        """Assert the partition property ``I_k + I_c = {0..N_o-1}``, disjoint."""
        allidx = np.concatenate([self.kept, self.cut])
        if allidx.size != self.n_o or np.unique(allidx).size != self.n_o:
            raise PlanError("kept and cut index sets do not partition the original nodes")
        if self.n_k != self.n_o - self.n_c:
            raise PlanError("N_k != N_o - N_c")


def _cyclic_run(panel_ids: Sequence[int], n_panels: int) -> np.ndarray:
    ids = np.asarray(panel_ids, dtype=int)
    if ids.size == 0:
        raise PlanError("empty panel list")
    if np.any(ids < 0) or np.any(ids >= n_panels):
        raise PlanError("panel id out of range")
    if np.unique(ids).size != ids.size:
        raise PlanError("repeated panel ids")
    if ids.size >= n_panels:
        raise PlanError("cannot cut every panel")
    steps = np.mod(np.diff(ids), n_panels)
    if np.any(steps != 1):
        raise PlanError(f"panels {ids.tolist()} are not contiguous along the curve")
    return ids


def _split_plan(disc: Discretization, cut_panels: np.ndarray):
    n = disc.n_panels
    last = int(cut_panels[-1])
    kept_panels = np.mod(last + 1 + np.arange(n - cut_panels.size), n)
    return disc.nodes_of(kept_panels), disc.nodes_of(cut_panels), kept_panels


def make_refinement_plan(disc: Discretization, panel_ids, factor: int) -> PerturbationPlan:
    """Replace a contiguous run of panels by ``factor`` times as many on the same interval."""
    factor = int(factor)
    if factor < 2:
        raise PlanError(f"refinement factor must be >= 2, got {factor}")
    cut_panels = _cyclic_run(panel_ids, disc.n_panels)
    curve_ids = set(disc.panel_curve[cut_panels].tolist())
    if len(curve_ids) != 1:
        raise PlanError("refined panels must lie on one curve")
    curve = disc.curves[curve_ids.pop()]
    pieces = []
    for a, b in disc.panel_bounds[cut_panels]:
        edges = np.linspace(a, b, factor + 1)
        pieces.append(np.column_stack([edges[:-1], edges[1:]]))
    new = _panelize(curve, np.vstack(pieces), disc.p)
    kept, cut, kept_panels = _split_plan(disc, cut_panels)
    plan = PerturbationPlan(disc, kept, cut, new, "refinement", kept_panels, cut_panels)
    plan.check()
    return plan


def _nearest_boundary(disc: Discretization, t: float) -> int:
    starts = disc.panel_bounds[:, 0]
    dist = np.abs(np.mod(t - starts + np.pi, TWO_PI) - np.pi)
    return int(np.argmin(dist))


def make_reshape_plan(disc: Discretization, cut_parameter_range, new_arc: Curve,
                      n_new_panels: int) -> PerturbationPlan:
    """Cut the panels spanning ``cut_parameter_range`` and insert ``new_arc``.

    The range is snapped to the nearest panel boundaries. ``new_arc`` must be
    an open arc running in the same direction as the original curve and
    meeting it at both snapped endpoints to within ``1e-12``.
    """
    if len(disc.curves) != 1 or not disc.curves[0].closed:
        raise PlanError("reshape plans need a discretization of a single closed curve")
    if new_arc.closed:
        raise PlanError("replacement piece must be an open arc")
    curve = disc.curves[0]
    t_a, t_b = (float(v) for v in cut_parameter_range)
    i_a = _nearest_boundary(disc, t_a)
    i_b = _nearest_boundary(disc, t_b)
    n = disc.n_panels
    count = (i_b - i_a) % n
    if count == 0:
        raise PlanError("cut range is empty after snapping to panel boundaries")
    cut_panels = np.mod(i_a + np.arange(count), n)
    start = disc.panel_bounds[i_a, 0]
    end = disc.panel_bounds[cut_panels[-1], 1]
    s0, s1 = new_arc.t_range
    gaps = (np.linalg.norm(new_arc(s0) - curve(start)), np.linalg.norm(new_arc(s1) - curve(end)))
    if max(gaps) > ENDPOINT_TOL:
        raise GeometryMismatchError(
            f"new arc endpoints miss the cut endpoints by {gaps[0]:.2e} / {gaps[1]:.2e}")
    new = build_panels(new_arc, n_new_panels, disc.p)
    kept, cut, kept_panels = _split_plan(disc, cut_panels)
    plan = PerturbationPlan(disc, kept, cut, new, "reshape", kept_panels, cut_panels)
    plan.check()
    return plan


def cut_interval(disc: Discretization, panel_ids) -> tuple[float, float]:
    """Parameter interval ``(t_a, t_b)`` covered by a contiguous run of panels (unwrapped)."""
    ids = _cyclic_run(panel_ids, disc.n_panels)
    t_a = float(disc.panel_bounds[ids[0], 0])
    t_b = float(disc.panel_bounds[ids[-1], 1])
    if t_b <= t_a:
        t_b += TWO_PI
    return t_a, t_b
