"""Limiting values of the principal eigenvalue attached to each limit-set component.

Every component of the limit set of ``x' = b(x)`` carries a value: ``c`` at a
stable point, the time average of ``c`` over a stable cycle, ``c`` at the
saddle of a stable figure-eight, a one-dimensional Rayleigh quotient over the
first integrals of a closed-orbit family, or a Laplacian eigenvalue on a
region where the drift vanishes. Unstable components get ``+inf``. The
predicted limit of ``lambda(A)`` is the smallest of these values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .dynamics import (ClosedOrbitFamily, HomoclinicStructure, IntegrationError, LimitComponent,
                       NoRecurrenceError, PeriodicOrbit, _ray_return)
from .fields import PlanarField, ScalarField
from .geometry import Disk, Domain, build_grid
from .pde import BoundarySpec, WeightError, principal_eigenvalue, solve_1d

__all__ = [
    "PredictedLimit", "CoareaWeights", "InconsistencyError", "AllInfiniteError",
    "fixed_point_value", "orbit_average", "saddle_value", "coarea_weights", "family_rayleigh",
    "degenerate_value", "component_value", "predicted_limit", "first_integral_on_grid",
    "constrained_rayleigh_2d",
]

CASES = ("FixedPointValue", "OrbitAverage", "SaddleValue", "FamilyRayleigh", "DegenerateN",
         "DegenerateD", "DegenerateDN", "Unstable")


class InconsistencyError(RuntimeError):
    """The time and arc-length forms of an orbit average disagree."""


class AllInfiniteError(RuntimeError):
    """No component has a finite value; the system was probably misclassified."""


@dataclass
class PredictedLimit:
    value: float
    case: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if (self.case == "Unstable") != (self.value == math.inf):
            raise ValueError("Unstable case must carry the value +inf and only it")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_json(self) -> dict:
        return {"value": self.value if self.finite else "inf", "case": self.case,
                "diagnostics": _jsonable(self.diagnostics)}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _unstable(reason: str) -> PredictedLimit:
    return PredictedLimit(math.inf, "Unstable", {"reason": reason})


def _c_at(c: ScalarField, p) -> float:
    return float(c(p[0], p[1]))


# --------------------------------------------------------------------------- #
# points, cycles, saddles
# --------------------------------------------------------------------------- #

def fixed_point_value(c: ScalarField, k: LimitComponent) -> PredictedLimit:
    """``c`` at a stable point; ``+inf`` for unstable points and saddles."""
    if k.kind != "FixedPt":
        raise ValueError("fixed_point_value needs a FixedPt component")
    if k.stability != "Stable":
        return _unstable(f"{k.data.kind} fixed point")
    p = k.data
    return PredictedLimit(_c_at(c, p.location), "FixedPointValue",
                          {"location": list(p.location), "kind": p.kind, "probe": p.probe})


def _arc_length_average(c: ScalarField, b: PlanarField, pts: np.ndarray, nodes: int = 8):
    """``(int c/|b| ds) / (int 1/|b| ds)`` on a periodic chord-length spline."""
    closed = pts.copy()
    closed[-1] = closed[0]
    chord = np.hypot(*np.diff(closed, axis=0).T)
    keep = np.concatenate([[True], chord > 1e-14])
    closed = closed[keep]
    u = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(closed, axis=0).T))])
    spl = CubicSpline(u, closed, bc_type="periodic")
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    a, h = u[:-1], np.diff(u)
    uq = (a[:, None] + 0.5 * h[:, None] * (gx[None, :] + 1.0)).ravel()
    wq = (0.5 * h[:, None] * gw[None, :]).ravel()
    xq = spl(uq)
    speed = np.hypot(*spl(uq, 1).T)
    b1, b2 = b(xq[:, 0], xq[:, 1])
    bm = np.hypot(b1, b2)
    cv = np.broadcast_to(np.asarray(c(xq[:, 0], xq[:, 1]), float), bm.shape)
    den = np.sum(wq * speed / bm)
    num = np.sum(wq * speed * cv / bm)
    return num / den, den


def orbit_average(c: ScalarField, b: PlanarField, orbit: PeriodicOrbit,
                  rel_tol: float = 1e-4) -> PredictedLimit:
    """Time average of ``c`` over a stable cycle, cross-checked by the arc-length form."""
    if orbit.stability != "Stable":
        return _unstable(f"{orbit.stability} cycle")
    pts, ts = orbit.samples, orbit.times
    cv = np.broadcast_to(np.asarray(c(pts[:, 0], pts[:, 1]), float), ts.shape)
    t_avg = float(simpson(cv, x=ts) / (ts[-1] - ts[0]))
    s_avg, s_len = _arc_length_average(c, b, pts)
    scale = max(abs(t_avg), abs(s_avg), 1e-300)
    rel = abs(t_avg - s_avg) / scale
    if rel > rel_tol and abs(t_avg - s_avg) > rel_tol:
        raise InconsistencyError(
            f"orbit average forms disagree: time {t_avg:.10g} vs arc length {s_avg:.10g}")
    return PredictedLimit(t_avg, "OrbitAverage",
                          {"arc_length_form": float(s_avg), "relative_difference": float(rel),
                           "period": orbit.period, "arc_time": float(s_len)})


def saddle_value(c: ScalarField, k: LimitComponent) -> PredictedLimit:
    """``c`` at the saddle of a two-sided stable figure-eight; ``+inf`` otherwise."""
    if k.kind not in ("HomoclinicUnion", "SingleHomoclinic"):
        raise ValueError("saddle_value needs a homoclinic component")
    hs: HomoclinicStructure = k.data
    if k.kind == "SingleHomoclinic":
        return _unstable("single homoclinic loop")
    if not hs.stable:
        return _unstable("homoclinic union not stable from every side")
    return PredictedLimit(_c_at(c, hs.saddle), "SaddleValue", {"saddle": list(hs.saddle)})


# --------------------------------------------------------------------------- #
# closed-orbit families
# --------------------------------------------------------------------------- #

@dataclass
class CoareaWeights:
    """Sturm-Liouville weights along the ray coordinate of a family.

    For ``phi = u(ell)``: ``int |grad phi|^2 = int u'^2 kappa``,
    ``int phi^2 = int u^2 mu`` and ``int c phi^2 = int u^2 gamma``.
    """

    ell: np.ndarray
    kappa: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    periods: np.ndarray

    def rows(self):
        return zip(self.ell, self.kappa, self.mu, self.gamma)


def _augmented_rhs(b: PlanarField, c: ScalarField):
    g1 = b.b1.scalar_grad_fn
    g2 = b.b2.scalar_grad_fn
    cf = c.expr.scalar_fn

    def f(y):
        x1, x2, th = y[0], y[1], y[2]
        v1, d11, _ = g1(x1, x2)
        v2, _, d22 = g2(x1, x2)
        e = math.exp(th)
        return (v1, v2, d11 + d22, (v1 * v1 + v2 * v2) / e, e, cf(x1, x2) * e)

    return f


def coarea_weights(c: ScalarField, b: PlanarField, fam: ClosedOrbitFamily, stations: int = 128,
                   tol: float = 1e-11) -> CoareaWeights:
    """Quadrature of the orbit line integrals at ``stations + 1`` ray points."""
    f = _augmented_rhs(b, c)
    rhs = b.rhs()
    ells = np.linspace(fam.l0, fam.l1, stations + 1)
    d1, d2 = fam.direction
    kappa = np.zeros_like(ells)
    mu = np.zeros_like(ells)
    gamma = np.zeros_like(ells)
    periods = np.zeros_like(ells)
    for j, ell in enumerate(ells):
        if ell == 0.0 and fam.inner_end == "center":
            continue  # the center carries no measure: kappa = mu = gamma = 0
        p = fam.point(ell)
        v1, v2 = rhs(*p)
        bm = math.hypot(v1, v2)
        if bm == 0.0:
            raise WeightError(f"drift vanishes on the ray at ell={ell:.6g}")
        dn = abs(d1 * (-v2 / bm) + d2 * (v1 / bm))
        if dn < 1e-12:
            raise WeightError(f"ray is tangent to the orbit at ell={ell:.6g}")
        grad0 = 1.0 / dn
        try:
            t, y, _ = _ray_return(f, [p[0], p[1], 0.0, 0.0, 0.0, 0.0], fam.origin,
                                  fam.direction, tol)
        except (NoRecurrenceError, IntegrationError) as exc:
            raise WeightError(f"orbit at ell={ell:.6g} does not close: {exc}") from exc
        kappa[j] = grad0 / bm * y[3]
        mu[j] = bm / grad0 * y[4]
        gamma[j] = bm / grad0 * y[5]
        periods[j] = t
    interior = slice(1, -1)
    if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(mu))):
        raise WeightError("non-finite weight")
    if np.any(kappa[interior] <= 0) or np.any(mu[interior] <= 0):
        raise WeightError("non-positive weight in the interior of the family")
    return CoareaWeights(ells, kappa, mu, gamma, periods)


def _family_ends(fam: ClosedOrbitFamily):
    left = "neumann"
    right = "dirichlet" if fam.outer_end == "unstable" else "neumann"
    return left, right


def family_rayleigh(c: ScalarField, b: PlanarField, fam: ClosedOrbitFamily, stations: int = 128,
                    richardson: bool = True, weights: CoareaWeights | None = None) -> PredictedLimit:
    """Smallest eigenvalue of ``-(kappa u')' + gamma u = lam mu u`` over the family."""
    if stations < 32 or stations % 2:
        raise ValueError("stations must be even and >= 32")
    w = weights or coarea_weights(c, b, fam, stations)
    left, right = _family_ends(fam)
    length = fam.l1 - fam.l0
    lam, u, res = solve_1d(w.kappa, w.gamma, w.mu, length, left, right)
    diag = {"stations": stations, "ends": [left, right], "residual": res.residual,
            "l_range": [fam.l0, fam.l1]}
    if richardson:
        lam2, _, _ = solve_1d(w.kappa[::2], w.gamma[::2], w.mu[::2], length, left, right)
        diag["coarse"] = lam2
        diag["richardson"] = lam + (lam - lam2) / 3.0
        diag["richardson_error"] = abs(lam - lam2) / 3.0
    return PredictedLimit(float(lam), "FamilyRayleigh", diag)


# --------------------------------------------------------------------------- #
# degenerate regions
# --------------------------------------------------------------------------- #

def _region_center(region: Domain):
    if isinstance(region, Disk):
        return region.center
    (a, b), (c, d) = region.bounds()
    return (0.5 * (a + c), 0.5 * (b + d))


def region_bc(region: Domain, case: str, sectors=()) -> BoundarySpec:
    """Boundary condition for a declared drift-free region."""
    if case == "N":
        return BoundarySpec.neumann()
    if case == "D":
        return BoundarySpec.dirichlet()
    if case != "DN":
        raise ValueError(f"unknown degenerate case {case!r}")
    if not sectors:
        raise ValueError("case DN needs Dirichlet sectors")
    specs = [BoundarySpec.dirichlet_sector(_region_center(region), t0, t1) for t0, t1 in sectors]

    def pred(mid, normal):
        out = np.zeros(len(mid), bool)
        for s in specs:
            out |= s.dirichlet_faces(mid, normal)
        return out

    return BoundarySpec("mixed", pred, "; ".join(s.description for s in specs))


def degenerate_value(c: ScalarField, region: Domain, case: str, sectors=(), n: int = 257,
                     tol: float = 1e-8) -> PredictedLimit:
    """Principal eigenvalue of ``-Lap + c`` on ``region`` (no drift)."""
    bc = region_bc(region, case, sectors)
    grid = build_grid(region, n)
    res = principal_eigenvalue(grid, None, 0.0, c, bc, tol=tol)
    return PredictedLimit(float(res.lam), f"Degenerate{case}",
                          {"n": n, "cells": grid.size, "residual": res.residual})


# --------------------------------------------------------------------------- #
# aggregation
# --------------------------------------------------------------------------- #

def component_value(c: ScalarField, b: PlanarField, k: LimitComponent, **opts) -> PredictedLimit:
    if k.kind == "FixedPt":
        return fixed_point_value(c, k)
    if k.kind == "Cycle":
        return orbit_average(c, b, k.data)
    if k.kind in ("HomoclinicUnion", "SingleHomoclinic"):
        return saddle_value(c, k)
    if k.kind == "ClosedOrbitFamily":
        return family_rayleigh(c, b, k.data, stations=opts.get("stations", 128))
    region = k.data
    return degenerate_value(c, region["region"], region["case"], region.get("sectors", ()),
                            n=opts.get("n", 257))


def predicted_limit(components: list[LimitComponent], c: ScalarField, b: PlanarField,
                    **opts) -> PredictedLimit:
    """Minimum of the component values."""
    if not components:
        raise ValueError("no limit-set components")
    values = [component_value(c, b, k, **opts) for k in components]
    best = min(range(len(values)), key=lambda i: values[i].value)
    if not values[best].finite:
        raise AllInfiniteError("every component is unstable; at least one must be stable")
    v = values[best]
    diag = dict(v.diagnostics)
    diag["component"] = best
    diag["components"] = [{"kind": k.kind, "value": p.value if p.finite else "inf", "case": p.case}
                          for k, p in zip(components, values)]
    return PredictedLimit(v.value, v.case, diag)


# --------------------------------------------------------------------------- #
# independent two-dimensional check of the family reduction
# --------------------------------------------------------------------------- #

def first_integral_on_grid(b: PlanarField, fam: ClosedOrbitFamily, points: np.ndarray,
                           t_max: float, dt: float) -> np.ndarray:
    """Ray coordinate of the orbit through each point (``nan`` if it never hits the ray).

    All points are advanced together with classical fourth-order Runge-Kutta.
    """
    o = np.asarray(fam.origin, float)
    d = np.asarray(fam.direction, float)
    nrm = np.array([-d[1], d[0]])
    pm = np.asarray(fam.point(0.5 * (fam.l0 + fam.l1)))
    v = np.asarray(b(pm[0], pm[1]), float)
    s0 = 1.0 if v @ nrm >= 0 else -1.0

    def f(x):
        b1, b2 = b(x[:, 0], x[:, 1])
        return np.stack([b1, b2], axis=1)

    x = np.array(points, float)
    ell = np.full(len(x), np.nan)
    act = np.arange(len(x))
    g = s0 * ((x - o) @ nrm)
    for _ in range(int(math.ceil(t_max / dt))):
        if act.size == 0:
            break
        xa = x[act]
        k1 = f(xa)
        k2 = f(xa + 0.5 * dt * k1)
        k3 = f(xa + 0.5 * dt * k2)
        k4 = f(xa + dt * k3)
        xn = xa + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        gn = s0 * ((xn - o) @ nrm)
        ga = g[act]
        with np.errstate(invalid="ignore", divide="ignore"):
            th = ga / (ga - gn)
        xc = xa + th[:, None] * (xn - xa)
        hit = (ga < 0) & (gn >= 0) & ((xc - o) @ d > 0)
        ell[act[hit]] = (xc[hit] - o) @ d
        bad = ~np.all(np.isfinite(xn), axis=1)
        x[act] = xn
        g[act] = gn
        act = act[~(hit | bad)]
    return ell


def constrained_rayleigh_2d(c: ScalarField, b: PlanarField, fam: ClosedOrbitFamily, grid,
                            stations: int = 64, steps_per_period: int = 1000) -> float:
    """Minimize the 2D Rayleigh quotient over grid functions ``u(ell(x))``.

    ``ell(x)`` is found by flowing every cell centre to the ray, ``u`` is
    piecewise linear in ``ell``, and the energy is the finite-volume Dirichlet
    form restricted to faces between cells of the family.
    """
    from scipy.linalg import eigh
    import scipy.sparse as sp

    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    periods = []
    for frac in (0.25, 0.5, 0.75, 0.999):
        ell = fam.l0 + frac * (fam.l1 - fam.l0)
        periods.append(_ray_return(f, fam.point(ell), fam.origin, fam.direction, 1e-10)[0])
    dt = min(periods) / steps_per_period
    ell = first_integral_on_grid(b, fam, grid.centers, 1.5 * max(periods), dt)
    inside = np.isfinite(ell) & (ell <= fam.l1) & (ell >= fam.l0)
    nodes = np.linspace(fam.l0, fam.l1, stations + 1)
    h = nodes[1] - nodes[0]
    cells = np.nonzero(inside)[0]
    k = np.clip(((ell[cells] - fam.l0) / h).astype(int), 0, stations - 1)
    t = (ell[cells] - nodes[k]) / h
    P = sp.csr_matrix((np.concatenate([1 - t, t]), (np.concatenate([cells, cells]),
                                                     np.concatenate([k, k + 1]))),
                      shape=(grid.size, stations + 1))
    both = inside[grid.face_lo] & inside[grid.face_hi]
    lo, hi = grid.face_lo[both], grid.face_hi[both]
    hax = np.where(grid.face_axis[both] == 0, grid.h1, grid.h2)
    m = len(lo)
    D = sp.csr_matrix((np.concatenate([np.ones(m), -np.ones(m)]),
                       (np.concatenate([np.arange(m)] * 2), np.concatenate([lo, hi]))),
                      shape=(m, grid.size))
    area = grid.h1 * grid.h2
    DP = (D @ P).toarray()
    K = DP.T @ (DP * (area / hax**2)[:, None])
    cv = np.broadcast_to(np.asarray(c(grid.centers[:, 0], grid.centers[:, 1]), float), (grid.size,))
    Pd = P.toarray()
    M = Pd.T @ (Pd * (area * inside)[:, None])
    C = Pd.T @ (Pd * (area * cv * inside)[:, None])
    keep = np.diag(M) > 0
    if _family_ends(fam)[1] == "dirichlet":
        keep[-1] = False
    sel = np.ix_(keep, keep)
    vals = eigh(K[sel] + C[sel], M[sel], eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])
