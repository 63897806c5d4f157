"""Phase-plane analysis of ``x' = b(x)``.

Integration uses an embedded Dormand-Prince 5(4) pair with cubic Hermite dense
output. On top of it sit fixed-point search and classification, Poincare-map
limit-cycle detection, homoclinic shooting from saddles, closed-orbit family
tracing and the assembly of the limit-set components of a planar field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import minimum_filter
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .fields import PlanarField
from .geometry import Domain, InflowReport, check_inflow, contains, diameter, domain_to_json

__all__ = [
    "IntegrationError", "BlowUpError", "StepUnderflowError", "NoRecurrenceError",
    "HomoclinicNotFound", "UnsupportedTopologyError",
    "Trajectory", "solve", "integrate", "section_crossing",
    "FixedPointInfo", "classify_jacobian", "find_fixed_points",
    "PeriodicOrbit", "find_limit_cycle", "HomoclinicStructure", "detect_homoclinic",
    "ClosedOrbitFamily", "LimitComponent", "AssembleOptions", "Analysis",
    "assemble_components", "hausdorff", "point_in_polygon",
]


class IntegrationError(RuntimeError):
    pass


class BlowUpError(IntegrationError):
    pass


class StepUnderflowError(IntegrationError):
    pass


class NoRecurrenceError(RuntimeError):
    pass


class HomoclinicNotFound(RuntimeError):
    pass


class UnsupportedTopologyError(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# integrator
# --------------------------------------------------------------------------- #

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# fifth-order weights minus fourth-order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _dp_step(f, y, k1, h):
    """One Dormand-Prince step; returns (y_new, k7, error vector)."""
    d = len(y)
    ks = [k1]
    for i in range(1, 7):
        a = _A[i]
        yi = [y[j] + h * sum(a[m] * ks[m][j] for m in range(i)) for j in range(d)]
        ks.append(f(yi))
    y_new = yi  # the last stage point is the fifth-order solution (FSAL)
    err = [h * sum(_E[m] * ks[m][j] for m in range(7)) for j in range(d)]
    return y_new, ks[6], err


@dataclass
class Trajectory:
    """Accepted integrator steps with Hermite dense output.

    ``times`` is monotone in the direction of integration (it decreases for
    backward runs). ``status`` records why integration stopped.
    """

    times: np.ndarray
    states: np.ndarray
    slopes: np.ndarray
    tol: float
    status: str = "completed"

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        """Dense output at time(s) ``t`` by cubic Hermite interpolation."""
        t = np.asarray(t, float)
        sgn = 1.0 if self.times[-1] >= self.times[0] else -1.0
        tt = sgn * self.times
        k = np.clip(np.searchsorted(tt, sgn * t, side="right") - 1, 0, len(tt) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        h = t1 - t0
        s = ((t - t0) / h)[..., None]
        y0, y1 = self.states[k], self.states[k + 1]
        f0, f1 = self.slopes[k], self.slopes[k + 1]
        hh = h[..., None]
        return ((2 * s**3 - 3 * s**2 + 1) * y0 + (s**3 - 2 * s**2 + s) * hh * f0
                + (-2 * s**3 + 3 * s**2) * y1 + (s**3 - s**2) * hh * f1)


def solve(f: Callable[[list], list], y0: Sequence[float], t_end: float, tol: float = 1e-9, *,
          stop: Callable | None = None, bound: float = 1e6, watch: int | None = None,
          max_step: float | None = None, max_steps: int = 2_000_000) -> Trajectory:
    """Integrate ``y' = f(y)`` from ``t=0`` to ``t_end`` (which may be negative).

    ``stop(t, y)`` is called after every accepted step; a truthy return ends the
    run with ``status`` set to that value. Only the first ``watch`` components
    count towards the blow-up bound.
    """
    if not (1e-14 <= tol <= 1e-2):
        raise ValueError("tolerance must lie in [1e-14, 1e-2]")
    sgn = 1.0 if t_end >= 0 else -1.0
    span = abs(t_end)
    g = f if sgn > 0 else (lambda y: [-v for v in f(y)])
    y = [float(v) for v in y0]
    d = len(y)
    watch = d if watch is None else watch
    k1 = list(g(y))
    if not all(map(math.isfinite, k1)):
        raise IntegrationError("right-hand side is not finite at the initial point")
    ts, ys, fs = [0.0], [list(y)], [list(k1)]
    max_step = span if max_step is None else min(max_step, span)
    ynorm = max(max(abs(v) for v in y), 1e-5)
    fnorm = max(max(abs(v) for v in k1), 1e-5)
    h = min(max_step, 0.01 * ynorm / fnorm)
    t = 0.0
    status = "completed"
    steps = 0
    while t < span and span > 0:
        if steps >= max_steps:
            raise IntegrationError("step budget exhausted")
        h = min(h, span - t)
        if h < 1e-14 * max(1.0, t):
            raise StepUnderflowError(f"step size underflow at t={sgn * t:.6g}")
        try:
            y_new, k7, err = _dp_step(g, y, k1, h)
            en = 0.0
            for j in range(d):
                sc = tol * (1.0 + max(abs(y[j]), abs(y_new[j])))
                en = max(en, abs(err[j]) / sc)
        except (ArithmeticError, ValueError):
            # trial step wandered where the field is undefined; shrink it
            en = math.inf
        if not math.isfinite(en):
            h *= 0.2
            steps += 1
            continue
        if en <= 1.0:
            t += h
            y, k1 = y_new, k7
            ts.append(t)
            ys.append(list(y))
            fs.append(list(k1))
            if max(abs(v) for v in y[:watch]) > bound:
                raise BlowUpError(f"|x| exceeded {bound:g} at t={sgn * t:.6g}")
            if stop is not None:
                res = stop(sgn * t, y)
                if res:
                    status = res if isinstance(res, str) else "stopped"
                    break
        fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        if en > 1.0:
            fac = min(fac, 1.0)
        h = min(h * fac, max_step)
        steps += 1
    times = sgn * np.asarray(ts)
    slopes = sgn * np.asarray(fs)
    return Trajectory(times, np.asarray(ys), slopes, tol, status)


def integrate(b: PlanarField, x0, t_end: float, tol: float = 1e-9, bound: float = 1e6,
              max_step: float | None = None, stop: Callable | None = None) -> Trajectory:
    """Solve ``x' = b(x)``, ``x(0) = x0`` up to ``t_end`` with local error ``<= tol``."""
    if not (1e-12 <= tol <= 1e-3):
        raise ValueError("tol must lie in [1e-12, 1e-3]")
    rhs = b.rhs()
    return solve(lambda y: rhs(y[0], y[1]), x0, t_end, tol, stop=stop, bound=bound,
                 max_step=max_step)


def _refine_crossing(f, y0, k0, h, gfun):
    """Root of ``gfun`` along a single step from ``y0`` (Brent on the step size)."""
    def g(tau):
        if tau == 0:
            return gfun(y0)
        return gfun(_dp_step(f, y0, k0, tau)[0])

    if g(h) <= 0:
        tau = h
    else:
        tau = brentq(g, 0.0, h, xtol=1e-15 * abs(h), rtol=4 * np.finfo(float).eps)
    y = _dp_step(f, y0, k0, tau)[0] if tau != 0 else list(y0)
    return tau, y


def section_crossing(f, y0, point, normal, t_max: float, tol: float, *,
                     tangent=None, window: float = math.inf, inside: Callable | None = None,
                     bound: float = 1e6, max_step: float | None = None, min_time: float = 0.0):
    """First crossing of the line through ``point`` with normal ``normal``.

    Only crossings from the negative to the positive side whose tangential
    offset lies within ``window`` count, and only once the orbit has been
    clearly on the negative side (so a start on the line is not a return). ``f`` acts on lists whose first two
    entries are the planar position (extra entries are carried quadratures).
    Returns ``(time, state, trajectory)``; raises ``NoRecurrenceError`` if no
    crossing happens before ``t_max`` or the orbit leaves ``inside``.
    """
    p1, p2 = float(point[0]), float(point[1])
    n1, n2 = float(normal[0]), float(normal[1])
    tg = (-n2, n1) if tangent is None else (float(tangent[0]), float(tangent[1]))

    def gfun(y):
        return (y[0] - p1) * n1 + (y[1] - p2) * n2

    arm = 1e-9 * (1.0 + abs(p1) + abs(p2))
    g0 = gfun(y0)
    last = {"t": 0.0, "y": list(y0), "g": g0, "armed": g0 < -arm}
    hit = {}

    def stop(t, y):
        gy = gfun(y)
        if inside is not None and not inside(y):
            return "exit"
        if last["armed"] and last["g"] < 0 <= gy and t >= min_time:
            off = (y[0] - p1) * tg[0] + (y[1] - p2) * tg[1]
            if abs(off) <= window:
                hit["t0"], hit["y0"] = last["t"], list(last["y"])
                return "crossed"
        last["t"], last["y"], last["g"] = t, list(y), gy
        if gy < -arm:
            last["armed"] = True
        return None

    traj = solve(f, y0, t_max, tol, stop=stop, bound=bound, watch=2, max_step=max_step)
    if traj.status != "crossed":
        reason = "left the domain" if traj.status == "exit" else "no return to the section"
        raise NoRecurrenceError(reason)
    t0, ya = hit["t0"], hit["y0"]
    h = traj.t_final - t0
    # refine on true Runge-Kutta steps from the last point before the crossing
    tau, yc = _refine_crossing(f, ya, list(f(ya)), h, gfun)
    return t0 + tau, np.asarray(yc), traj


# --------------------------------------------------------------------------- #
# fixed points
# --------------------------------------------------------------------------- #

KINDS = ("StableNode", "StableSpiral", "UnstableNode", "UnstableSpiral", "Saddle", "Center",
         "Degenerate")
_STABLE_KINDS = ("StableNode", "StableSpiral")


@dataclass(frozen=True)
class FixedPointInfo:
    """A zero of ``b`` with its linearization.

    ``probe`` is set for points whose linearization is a center: the nonlinear
    winding test reports ``"stable"``, ``"unstable"`` or ``"neutral"``.
    ``on_boundary`` marks roots found on the edge of the closed domain.
    """

    location: tuple[float, float]
    eigenvalues: tuple[complex, complex]
    kind: str
    residual: float = 0.0
    probe: str | None = None
    on_boundary: bool = False

    @property
    def is_stable(self) -> bool:
        if self.kind in _STABLE_KINDS:
            return True
        return self.kind == "Degenerate" and self.probe == "stable"

    def to_json(self) -> dict:
        return {
            "location": list(self.location),
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "kind": self.kind,
            "residual": self.residual,
            "probe": self.probe,
            "on_boundary": self.on_boundary,
        }


def classify_jacobian(jac, rel: float = 1e-8) -> tuple[str, tuple[complex, complex]]:
    """Kind of a planar fixed point from its Jacobian eigenvalues."""
    ev = np.linalg.eigvals(np.asarray(jac, float)).astype(complex)
    ev = tuple(sorted(ev, key=lambda z: (z.real, z.imag)))
    mags = np.abs(ev)
    scale = float(mags.max())
    if scale == 0.0 or mags.min() <= rel * scale:
        return "Degenerate", ev
    re = np.array([z.real for z in ev])
    im = np.array([z.imag for z in ev])
    zero = np.abs(re) <= rel * mags
    if zero.all():
        return ("Center" if np.all(np.abs(im) > rel * scale) else "Degenerate"), ev
    if zero.any():
        return "Degenerate", ev
    if re[0] * re[1] < 0:
        return "Saddle", ev
    spiral = bool(np.any(np.abs(im) > rel * scale))
    if re[0] < 0:
        return ("StableSpiral" if spiral else "StableNode"), ev
    return ("UnstableSpiral" if spiral else "UnstableNode"), ev


def _probe_center(b: PlanarField, x, freq: float, radius: float, turns: int = 8,
                  tol: float = 1e-11) -> str:
    """Nonlinear stability of a linear center by measuring winding distances."""
    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    start = [x[0] + radius, x[1]]
    period = 2 * math.pi / freq
    radii = []
    y = start
    ccw = rhs(*start)[1] > 0
    normal = (0.0, 1.0) if ccw else (0.0, -1.0)
    for _ in range(turns):
        try:
            _, yc, _ = section_crossing(f, y, x, normal, 4 * period, tol, tangent=(1.0, 0.0))
        except (NoRecurrenceError, IntegrationError):
            break
        if yc[0] <= x[0]:
            break
        radii.append(yc[0] - x[0])
        y = [float(yc[0]), float(yc[1])]
    if len(radii) < 2:
        return "neutral"
    ratio = radii[-1] / radius
    if ratio < 1 - 1e-4 and radii[-1] < radii[0]:
        return "stable"
    if ratio > 1 + 1e-4 and radii[-1] > radii[0]:
        return "unstable"
    return "neutral"


def _in_closure(d: Domain, x, eps: float) -> tuple[bool, bool]:
    """(inside or on the boundary, strictly on the boundary) for a root ``x``."""
    if contains(d, x):
        return True, False
    for dx, dy in ((eps, 0), (-eps, 0), (0, eps), (0, -eps)):
        if contains(d, (x[0] + dx, x[1] + dy)):
            return True, True
    return False, False


def find_fixed_points(b: PlanarField, d: Domain, grid_seeds: int = 32,
                      diagnostics: dict | None = None) -> list[FixedPointInfo]:
    """Zeros of ``b`` in the closed domain, classified by linearization."""
    if grid_seeds < 16:
        raise ValueError("grid_seeds must be >= 16")
    (lo1, lo2), (hi1, hi2) = d.bounds()
    s1 = lo1 + (np.arange(grid_seeds) + 0.5) * (hi1 - lo1) / grid_seeds
    s2 = lo2 + (np.arange(grid_seeds) + 0.5) * (hi2 - lo2) / grid_seeds
    X1, X2 = np.meshgrid(s1, s2, indexing="ij")
    inside = contains(d, np.stack([X1, X2], axis=-1))
    b1, b2 = b(X1, X2)
    mag = np.hypot(b1, b2)
    mag = np.where(inside & np.isfinite(mag), mag, np.inf)
    bscale = float(np.max(mag[np.isfinite(mag)])) if np.isfinite(mag).any() else 1.0
    local_min = (mag == minimum_filter(mag, size=3, mode="nearest")) & np.isfinite(mag)
    seeds = np.stack([X1[local_min], X2[local_min]], axis=-1)

    diam = diameter(d)
    found: list[tuple[np.ndarray, float]] = []
    failures = 0
    for seed in seeds:
        root = _newton(b, seed, diam)
        if root is None:
            failures += 1
            continue
        x, res = root
        if res > 1e-8 * max(bscale, 1e-300):
            failures += 1
            continue
        ok, _ = _in_closure(d, x, 1e-7 * diam)
        if not ok:
            continue
        for i, (y, r) in enumerate(found):
            if np.hypot(*(x - y)) <= 1e-6:
                if res < r:
                    found[i] = (x, res)
                break
        else:
            found.append((x, res))
    if diagnostics is not None:
        diagnostics["newton_failures"] = failures
        diagnostics["seeds"] = len(seeds)

    out = []
    for x, res in sorted(found, key=lambda p: (round(p[0][0], 9), round(p[0][1], 9))):
        jac = b.jacobian(*x)
        kind, ev = classify_jacobian(jac)
        probe = None
        if kind == "Center":
            freq = abs(ev[0].imag)
            probe = _probe_center(b, x, freq, 0.02 * diam)
            if probe != "neutral":
                kind = "Degenerate"
        _, on_edge = _in_closure(d, x, 1e-7 * diam)
        out.append(FixedPointInfo((float(x[0]), float(x[1])), ev, kind, float(res), probe, on_edge))
    return out


def _newton(b: PlanarField, x0, diam: float, maxit: int = 60):
    x = np.array(x0, float)
    for _ in range(maxit):
        fx = np.array(b(x[0], x[1]))
        if not np.all(np.isfinite(fx)):
            return None
        try:
            step = np.linalg.solve(b.jacobian(*x), fx)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        x = x - step
        if np.hypot(*(x - x0)) > 2 * diam:
            return None
        if np.hypot(*step) <= 1e-14 * (1 + np.hypot(*x)):
            break
    fx = np.array(b(x[0], x[1]))
    if not np.all(np.isfinite(fx)):
        return None
    return x, float(np.hypot(*fx))


# --------------------------------------------------------------------------- #
# periodic orbits
# --------------------------------------------------------------------------- #

def point_in_polygon(poly: np.ndarray, p) -> bool:
    """Even-odd rule test of ``p`` against the closed polygon ``poly``."""
    x, y = float(p[0]), float(p[1])
    xs, ys = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    cond = (ys > y) != (yn > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xs + (y - ys) * (xn - xs) / (yn - ys)
    return bool(np.count_nonzero(cond & (x < xint)) % 2)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point samples."""
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))


def _extent(pts: np.ndarray) -> float:
    return float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))


@dataclass
class PeriodicOrbit:
    """One period of a closed orbit sampled uniformly in time.

    ``stability`` is ``Stable``, ``Unstable``, ``SemiStable`` or ``Neutral``
    (return-map slope one on both sides, as for members of a family).
    """

    samples: np.ndarray
    times: np.ndarray
    period: float
    stability: str
    inner_slope: float
    outer_slope: float
    residual: float
    section_point: tuple[float, float] = (0.0, 0.0)
    section_normal: tuple[float, float] = (1.0, 0.0)

    @property
    def closure_gap(self) -> float:
        return float(np.hypot(*(self.samples[0] - self.samples[-1])))

    @property
    def size(self) -> float:
        return _extent(self.samples)

    def encloses(self, p) -> bool:
        return point_in_polygon(self.samples[:-1], p)

    def to_json(self, max_points: int = 256) -> dict:
        step = max(1, (len(self.samples) - 1) // max_points)
        pts = self.samples[::step]
        return {
            "period": self.period,
            "stability": self.stability,
            "inner_slope": self.inner_slope,
            "outer_slope": self.outer_slope,
            "residual": self.residual,
            "closure_gap": self.closure_gap,
            "samples": pts.tolist(),
        }


def _classify_slopes(inner: float, outer: float, neutral_tol: float = 1e-5) -> str:
    si = abs(inner) < 1 - neutral_tol, abs(inner) > 1 + neutral_tol
    so = abs(outer) < 1 - neutral_tol, abs(outer) > 1 + neutral_tol
    if not any(si) and not any(so):
        return "Neutral"
    if si[0] and so[0]:
        return "Stable"
    if si[1] and so[1]:
        return "Unstable"
    return "SemiStable"


def sample_orbit(b: PlanarField, x0, period: float, samples: int = 1024,
                 tol: float = 1e-11) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-in-time samples of the orbit through ``x0`` over ``[0, period]``."""
    traj = integrate(b, x0, period, tol=max(tol, 1e-12), max_step=period / 256)
    ts = np.linspace(0.0, period, samples + 1)
    pts = traj(ts)
    pts[0] = traj.states[0]
    pts[-1] = traj.final
    return ts, pts


def find_limit_cycle(b: PlanarField, seed, tol: float = 1e-8, domain: Domain | None = None,
                     transient: float = 30.0, t_max: float = 500.0, samples: int = 1024,
                     max_secant: int = 40) -> PeriodicOrbit:
    """Locate the periodic orbit reached from ``seed`` by a Poincare return map."""
    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    itol = min(1e-3, max(1e-12, tol * 1e-2))
    inside = (lambda y: bool(contains(domain, (y[0], y[1])))) if domain is not None else None
    bmag = lambda p: math.hypot(*rhs(p[0], p[1]))
    x = [float(seed[0]), float(seed[1])]

    tail = np.array([x])
    if transient > 0:
        traj = solve(f, x, transient, itol, stop=(lambda t, y: "exit" if inside and not inside(y)
                                                  else None), watch=2)
        if traj.status == "exit":
            raise NoRecurrenceError("trajectory left the domain")
        x = list(traj.final)
        tail = traj.states[len(traj.states) * 3 // 4:]
    if bmag(x) < 1e-9:
        raise NoRecurrenceError("trajectory converged to a fixed point")

    bx = rhs(*x)
    nb = math.hypot(*bx)
    normal = (bx[0] / nb, bx[1] / nb)
    tangent = (-normal[1], normal[0])
    point = (x[0], x[1])

    # first return to size the window
    try:
        t1, y1, traj1 = section_crossing(f, x, point, normal, t_max, itol, tangent=tangent,
                                         inside=inside)
    except IntegrationError as exc:
        raise NoRecurrenceError(str(exc)) from exc
    size = max(_extent(traj1.states), _extent(tail), 1e-12)
    if size < 1e-7:
        raise NoRecurrenceError("trajectory converged to a fixed point")
    window = 0.25 * size
    period_guess = t1

    def ret(s):
        y0 = [point[0] + s * tangent[0], point[1] + s * tangent[1]]
        try:
            t, yc, _ = section_crossing(f, y0, point, normal, max(4 * period_guess, 10.0), itol,
                                        tangent=tangent, window=window, inside=inside)
        except IntegrationError as exc:
            raise NoRecurrenceError(str(exc)) from exc
        return ((yc[0] - point[0]) * tangent[0] + (yc[1] - point[1]) * tangent[1]), t

    s0, s1 = 0.0, (y1[0] - point[0]) * tangent[0] + (y1[1] - point[1]) * tangent[1]
    F0 = s1 - s0
    P1, _ = ret(s1)
    F1 = P1 - s1
    atol = tol * max(1.0, size)
    it = 0
    while abs(F1) > atol:
        it += 1
        if it > max_secant:
            raise NoRecurrenceError("return map iteration did not converge")
        if F1 == F0:
            raise NoRecurrenceError("flat return map")
        s2 = s1 - F1 * (s1 - s0) / (F1 - F0)
        if abs(s2) > window:
            raise NoRecurrenceError("return map iteration left the section window")
        s0, F0 = s1, F1
        s1 = s2
        P1, _ = ret(s1)
        F1 = P1 - s1
    s_star = s1
    p_star, period = ret(s_star)
    residual = abs(p_star - s_star)

    delta = 1e-4 * size

    def side_slope(sgn):
        # a perturbation that escapes the section window is repelled on that side
        try:
            p, _ = ret(s_star + sgn * delta)
        except NoRecurrenceError:
            return math.inf
        return sgn * (p - p_star) / delta

    slope_plus = side_slope(1.0)
    slope_minus = side_slope(-1.0)

    x_star = (point[0] + s_star * tangent[0], point[1] + s_star * tangent[1])
    ts, pts = sample_orbit(b, x_star, period, samples)
    if _extent(pts) < 1e-6:
        raise NoRecurrenceError("degenerate orbit")
    probe = (x_star[0] + 10 * delta * tangent[0], x_star[1] + 10 * delta * tangent[1])
    plus_inside = point_in_polygon(pts[:-1], probe)
    inner, outer = (slope_plus, slope_minus) if plus_inside else (slope_minus, slope_plus)
    return PeriodicOrbit(pts, ts, float(period), _classify_slopes(inner, outer),
                         float(inner), float(outer), float(residual), x_star, normal)


# --------------------------------------------------------------------------- #
# homoclinic structures
# --------------------------------------------------------------------------- #

@dataclass
class HomoclinicStructure:
    saddle: tuple[float, float]
    loops: list[np.ndarray]
    stability_outside: str
    stability_inside: list[str]
    transit_times: list[float] = field(default_factory=list)

    @property
    def is_union(self) -> bool:
        return len(self.loops) == 2

    @property
    def stable(self) -> bool:
        return self.stability_outside == "Stable" and all(s == "Stable" for s in self.stability_inside)

    def to_json(self, max_points: int = 256) -> dict:
        loops = []
        for lp in self.loops:
            step = max(1, len(lp) // max_points)
            loops.append(lp[::step].tolist())
        return {
            "saddle": list(self.saddle),
            "loops": loops,
            "stability_outside": self.stability_outside,
            "stability_inside": self.stability_inside,
            "transit_times": self.transit_times,
        }


def _shoot(f, start, saddle, t_max, tol, far, inside, others, itol):
    """Follow a separatrix branch; returns (status, trajectory)."""
    sx, sy = saddle
    state = {"far": False}

    def stop(t, y):
        if inside is not None and not inside(y):
            return "exit"
        r = math.hypot(y[0] - sx, y[1] - sy)
        if r > far:
            state["far"] = True
        elif state["far"] and r <= tol:
            return "returned"
        for ox, oy in others:
            if math.hypot(y[0] - ox, y[1] - oy) <= tol:
                return "other-saddle"
        return None

    traj = solve(f, start, t_max, itol, stop=stop, watch=2)
    return traj.status, traj


def _monotone_tail(traj: Trajectory, saddle) -> bool:
    pts = traj.states
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    tail = pts[arc >= 0.8 * arc[-1]]
    r = np.hypot(tail[:, 0] - saddle[0], tail[:, 1] - saddle[1])
    return bool(np.all(np.diff(r) <= 1e-9 * max(1.0, r.max())))


def _side_stability(f, p, n_hat, delta, size, itol, returns=4) -> str:
    """Attraction of the orbit through ``p`` from the side ``n_hat`` points to."""
    fp = f(list(p))
    nb = math.hypot(*fp)
    normal = (fp[0] / nb, fp[1] / nb)
    y = [p[0] + delta * n_hat[0], p[1] + delta * n_hat[1]]
    offs = [delta]
    for _ in range(returns):
        try:
            _, yc, _ = section_crossing(f, y, p, normal, 500.0, itol, tangent=n_hat,
                                        window=0.25 * size)
        except (NoRecurrenceError, IntegrationError):
            return "Unstable"
        off = (yc[0] - p[0]) * n_hat[0] + (yc[1] - p[1]) * n_hat[1]
        if off <= 0:
            return "Unstable"
        offs.append(off)
        if off < 1e-3 * delta:
            break
        y = [float(yc[0]), float(yc[1])]
    return "Stable" if offs[-1] < offs[0] else "Unstable"


def detect_homoclinic(b: PlanarField, saddle: FixedPointInfo, tol: float | None = None,
                      domain: Domain | None = None, others: Sequence = (),
                      t_max: float | None = None, offset: float = 1e-6) -> HomoclinicStructure:
    """Shoot the separatrices of ``saddle`` and collect loops that close on it."""
    if saddle.kind != "Saddle":
        raise ValueError("detect_homoclinic needs a saddle")
    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    x0 = saddle.location
    diam = diameter(domain) if domain is not None else 1.0
    tol = 1e-4 * diam if tol is None else tol
    itol = 1e-10
    inside = (lambda y: bool(contains(domain, (y[0], y[1])))) if domain is not None else None
    w, v = np.linalg.eig(b.jacobian(*x0))
    w = w.real
    vu = v[:, int(np.argmax(w))].real
    vs = v[:, int(np.argmin(w))].real
    vu /= np.linalg.norm(vu)
    vs /= np.linalg.norm(vs)
    rate = min(abs(w.max()), abs(w.min()))
    t_max = t_max if t_max is not None else 20.0 * math.log(1.0 / offset) / rate + 50.0
    far = max(0.05 * diam, 100 * tol)
    others = [o for o in others if math.hypot(o[0] - x0[0], o[1] - x0[1]) > 1e-6]

    def branch(direction, sign, t_end):
        start = [x0[0] + sign * offset * direction[0], x0[1] + sign * offset * direction[1]]
        return _shoot(f, start, x0, t_end, tol, far, inside, others, itol)

    forward = [branch(vu, s, t_max) for s in (1, -1)]
    backward = [branch(vs, s, -t_max) for s in (1, -1)]
    for status, _ in forward + backward:
        if status == "other-saddle":
            raise UnsupportedTopologyError(
                f"separatrix of the saddle at {x0} connects to another saddle")

    loops, times = [], []
    for status, traj in forward:
        if status != "returned" or not _monotone_tail(traj, x0):
            continue
        end = traj.final - np.asarray(x0)
        sign = 0 if float(end @ vs) >= 0 else 1
        bstatus, btraj = backward[sign]
        if bstatus != "returned":
            continue
        # the backward branch must trace the same loop
        if hausdorff(traj.states, btraj.states) > 0.05 * _extent(traj.states):
            continue
        loops.append(np.vstack([np.asarray(x0)[None, :], traj.states, np.asarray(x0)[None, :]]))
        times.append(traj.t_final)
    if not loops:
        raise HomoclinicNotFound(f"no homoclinic loop at the saddle {x0}")

    inside_tags = []
    outside_tags = []
    for lp in loops:
        r = np.hypot(lp[:, 0] - x0[0], lp[:, 1] - x0[1])
        k = int(np.argmax(r))
        p = (float(lp[k, 0]), float(lp[k, 1]))
        fp = f(list(p))
        nb = math.hypot(*fp)
        n_hat = (-fp[1] / nb, fp[0] / nb)
        size = _extent(lp)
        delta = 0.02 * size
        probe = (p[0] + delta * n_hat[0], p[1] + delta * n_hat[1])
        if not point_in_polygon(lp, probe):
            n_hat = (-n_hat[0], -n_hat[1])
        inside_tags.append(_side_stability(f, p, n_hat, delta, size, itol))
        out_n = (-n_hat[0], -n_hat[1])
        outside_tags.append(_side_stability(f, p, out_n, delta, size, itol))
    outside = "Stable" if all(t == "Stable" for t in outside_tags) else "Unstable"
    return HomoclinicStructure((float(x0[0]), float(x0[1])), loops, outside, inside_tags, times)


# --------------------------------------------------------------------------- #
# closed-orbit families
# --------------------------------------------------------------------------- #

@dataclass
class ClosedOrbitFamily:
    """Periodic orbits crossing the ray ``origin + l * direction`` for ``l`` in ``[l0, l1]``.

    ``inner_end`` is ``center`` when the family shrinks to a center point;
    ``outer_end`` is ``boundary`` (the family fills up to the domain edge),
    ``stable`` or ``unstable`` (the family is bounded by a cycle attracting or
    repelling the outside).
    """

    field: PlanarField
    origin: tuple[float, float]
    direction: tuple[float, float]
    l0: float
    l1: float
    inner_end: str
    outer_end: str

    def point(self, ell: float) -> tuple[float, float]:
        return (self.origin[0] + ell * self.direction[0], self.origin[1] + ell * self.direction[1])

    def orbit(self, ell: float, samples: int = 256, tol: float = 1e-10):
        """Time samples and period of the orbit through the ray point at ``ell``."""
        rhs = self.field.rhs()
        f = lambda y: rhs(y[0], y[1])
        t, _, _ = _ray_return(f, self.point(ell), self.origin, self.direction, tol)
        return sample_orbit(self.field, self.point(ell), t, samples, tol)

    def to_json(self) -> dict:
        return {"origin": list(self.origin), "direction": list(self.direction),
                "l0": self.l0, "l1": self.l1, "inner_end": self.inner_end,
                "outer_end": self.outer_end}


def _ray_return(f, start, origin, direction, tol, inside=None, t_max=1e3):
    """Return to the ray through ``origin``; ``f`` may carry extra components."""
    d1, d2 = direction
    fx = f(list(start))
    normal = (-d2, d1)
    # orient the section so that the orbit leaves towards its positive side
    if fx[0] * normal[0] + fx[1] * normal[1] < 0:
        normal = (d2, -d1)
    ell = (start[0] - origin[0]) * d1 + (start[1] - origin[1]) * d2
    t, y, traj = section_crossing(f, start, origin, normal, t_max, tol, tangent=direction,
                                  window=math.inf, inside=inside, min_time=0.0)
    # require the crossing on the same half of the line
    if (y[0] - origin[0]) * d1 + (y[1] - origin[1]) * d2 <= 0:
        raise NoRecurrenceError("orbit returned on the opposite half of the ray")
    return t, y, ell


def _ray_length(d: Domain, origin, direction, diam):
    lo, hi = 0.0, 2 * diam
    if contains(d, (origin[0] + hi * direction[0], origin[1] + hi * direction[1])):
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if contains(d, (origin[0] + mid * direction[0], origin[1] + mid * direction[1])):
            lo = mid
        else:
            hi = mid
    return lo


def trace_family(b: PlanarField, center: FixedPointInfo, d: Domain, stations: int = 24,
                 tol: float = 1e-10) -> ClosedOrbitFamily | None:
    """Follow periodic orbits outward from a center until they stop closing."""
    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    diam = diameter(d)
    o = center.location
    dirs = [(math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)) for k in range(8)]
    lengths = [_ray_length(d, o, u, diam) for u in dirs]
    k = int(np.argmax(lengths))
    u, L = dirs[k], lengths[k]
    if L <= 1e-9 * diam:
        return None
    inside = lambda y: bool(contains(d, (y[0], y[1])))
    close_tol = 1e-6 * diam

    def closes(ell):
        """(True, None) if periodic inside; else (False, reason, return offset)."""
        p = (o[0] + ell * u[0], o[1] + ell * u[1])
        try:
            _, y, _ = _ray_return(f, p, o, u, tol, inside=inside)
        except NoRecurrenceError as exc:
            return False, ("exit" if "domain" in str(exc) else "open"), None
        except IntegrationError:
            return False, "open", None
        ell2 = (y[0] - o[0]) * u[0] + (y[1] - o[1]) * u[1]
        if abs(ell2 - ell) <= close_tol:
            return True, None, ell2
        return False, "open", ell2

    ok_l = 0.0
    bad_l = None
    reason = None
    for j in range(1, stations + 1):
        ell = L * j / stations * (1 - 1e-9)
        ok, why, _ = closes(ell)
        if ok:
            ok_l = ell
        else:
            bad_l, reason = ell, why
            break
    if bad_l is None:
        return ClosedOrbitFamily(b, o, u, 0.0, L, "center", "boundary")
    if ok_l <= 1e-3 * diam:
        return None
    lo, hi = ok_l, bad_l
    while hi - lo > 1e-7 * diam:
        mid = 0.5 * (lo + hi)
        ok, why, _ = closes(mid)
        if ok:
            lo = mid
        else:
            hi, reason = mid, why
    if reason == "exit":
        return ClosedOrbitFamily(b, o, u, 0.0, lo, "center", "boundary")
    # bounded by a cycle: test attraction of the outside
    probe = lo + 0.02 * (L - lo)
    _, _, ret = closes(probe)
    if ret is None:
        outer = "unstable"
    else:
        outer = "stable" if abs(ret - lo) < abs(probe - lo) else "unstable"
    return ClosedOrbitFamily(b, o, u, 0.0, lo, "center", outer)


# --------------------------------------------------------------------------- #
# limit-set assembly
# --------------------------------------------------------------------------- #

COMPONENT_KINDS = ("FixedPt", "Cycle", "HomoclinicUnion", "SingleHomoclinic",
                   "ClosedOrbitFamily", "DegenerateRegion")


@dataclass
class LimitComponent:
    """One connected component of the limit set; ``data`` depends on ``kind``.

    For ``DegenerateRegion`` the data is a dict with ``region`` (a domain),
    ``case`` (``N``, ``D`` or ``DN``) and optional Dirichlet ``sectors``.
    """

    kind: str
    data: object

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}")

    @property
    def stability(self) -> str:
        k, x = self.kind, self.data
        if k == "FixedPt":
            if x.is_stable or (x.on_boundary and x.kind == "Center"):
                return "Stable"
            return "Saddle" if x.kind == "Saddle" else "Unstable"
        if k == "Cycle":
            return x.stability
        if k in ("HomoclinicUnion", "SingleHomoclinic"):
            return "Stable" if x.stable else "Unstable"
        if k == "ClosedOrbitFamily":
            return "Neutral"
        return "Declared"

    def to_json(self) -> dict:
        k, x = self.kind, self.data
        out = {"kind": k, "stability": self.stability}
        if k == "DegenerateRegion":
            out.update({"region": domain_to_json(x["region"]), "case": x["case"],
                        "sectors": [list(s) for s in x.get("sectors", ())]})
        else:
            out.update(x.to_json())
        return out


@dataclass
class AssembleOptions:
    grid_seeds: int = 32
    probe_seeds: int = 6
    probe_time: float = 60.0
    tol: float = 1e-8
    homoclinic_tol: float | None = None
    backward_probes: bool = True
    degenerate: list = field(default_factory=list)


@dataclass
class Analysis:
    components: list[LimitComponent]
    inflow: InflowReport
    warnings: list[str]
    diagnostics: dict


def _dist_to(pts: np.ndarray, p) -> float:
    return float(np.min(np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1])))


def _sort_key(c: LimitComponent):
    order = COMPONENT_KINDS.index(c.kind)
    x = c.data
    if c.kind == "FixedPt":
        ref = x.location
    elif c.kind == "Cycle":
        ref = tuple(x.samples.mean(axis=0))
    elif c.kind in ("HomoclinicUnion", "SingleHomoclinic"):
        ref = x.saddle
    elif c.kind == "ClosedOrbitFamily":
        ref = x.origin
    else:
        ref = (0.0, 0.0)
    return (order, round(ref[0], 6), round(ref[1], 6))


def assemble_components(b: PlanarField, d: Domain, opts: AssembleOptions | None = None) -> Analysis:
    """Fixed points, cycles, homoclinic structures and families of ``b`` in ``d``."""
    opts = opts or AssembleOptions()
    warnings: list[str] = []
    diag: dict = {}
    inflow = check_inflow(d, b)
    if not inflow.satisfied:
        warnings.append(f"inflow condition violated: max b.n = {inflow.max_bn:.3g}")
    diam = diameter(d)
    fps = find_fixed_points(b, d, opts.grid_seeds, diag)
    saddles = [p.location for p in fps if p.kind == "Saddle"]

    comps: list[LimitComponent] = []
    homoclinic: list[HomoclinicStructure] = []
    families: list[ClosedOrbitFamily] = []
    absorbed: set[int] = set()
    for i, p in enumerate(fps):
        if p.kind == "Saddle":
            try:
                hs = detect_homoclinic(b, p, opts.homoclinic_tol, d, others=saddles)
            except HomoclinicNotFound:
                continue
            homoclinic.append(hs)
            absorbed.add(i)
            comps.append(LimitComponent("HomoclinicUnion" if hs.is_union else "SingleHomoclinic", hs))
        elif p.kind == "Center" and not p.on_boundary:
            fam = trace_family(b, p, d)
            if fam is not None:
                families.append(fam)
                absorbed.add(i)
                comps.append(LimitComponent("ClosedOrbitFamily", fam))
    for i, p in enumerate(fps):
        if i not in absorbed:
            comps.append(LimitComponent("FixedPt", p))

    family_orbits = []
    for fam in families:
        try:
            family_orbits.append((fam, fam.orbit(fam.l1 * (1 - 1e-6))[1]))
        except (NoRecurrenceError, IntegrationError):
            family_orbits.append((fam, None))

    cycles: list[PeriodicOrbit] = []
    probe_log = []
    seeds = _probe_seeds(d, opts.probe_seeds)
    rhs = b.rhs()
    f = lambda y: rhs(y[0], y[1])
    inside = lambda y: bool(contains(d, (y[0], y[1])))
    near = 1e-2 * diam
    directions = (1.0, -1.0) if opts.backward_probes else (1.0,)
    for idx, s in enumerate(seeds):
        if any(orb is not None and orb_contains(orb, s) for _, orb in family_orbits):
            probe_log.append((idx, "family"))
            continue
        for sgn in directions:
            outcome = _run_probe(b, f, s, sgn, d, inside, fps, homoclinic, cycles, opts,
                                 diam, near)
            probe_log.append((idx, outcome))
    diag["probes"] = probe_log
    comps.extend(LimitComponent("Cycle", c) for c in cycles)
    for region in opts.degenerate:
        comps.append(LimitComponent("DegenerateRegion", region))
    comps.sort(key=_sort_key)
    return Analysis(comps, inflow, warnings, diag)


def orb_contains(orbit_pts: np.ndarray, p) -> bool:
    return point_in_polygon(orbit_pts[:-1], p)


def _probe_seeds(d: Domain, n: int) -> list[tuple[float, float]]:
    (lo1, lo2), (hi1, hi2) = d.bounds()
    out = []
    for i in range(n):
        for j in range(n):
            p = (lo1 + (i + 0.5) * (hi1 - lo1) / n, lo2 + (j + 0.5) * (hi2 - lo2) / n)
            if contains(d, p):
                out.append(p)
    return out


def _run_probe(b, f, seed, sgn, d, inside, fps, homoclinic, cycles, opts, diam, near) -> str:
    """Follow one seed forward (``sgn=1``) or backward and record what it finds."""
    fix_r = 1e-3 * diam
    # passing close to a saddle is not convergence
    targets = [p for p in fps if (p.is_stable if sgn > 0 else
                                  p.kind in ("UnstableNode", "UnstableSpiral")
                                  or (p.kind == "Degenerate" and p.probe == "unstable"))]

    def stop(t, y):
        if not inside(y):
            return "exit"
        for p in targets:
            if math.hypot(y[0] - p.location[0], y[1] - p.location[1]) < fix_r:
                return "fixed"
        return None

    try:
        traj = solve(f, seed, sgn * opts.probe_time, 1e-8, stop=stop, watch=2)
    except IntegrationError:
        return "failed"
    if traj.status in ("exit", "fixed"):
        return traj.status
    end = traj.final
    for hs in homoclinic:
        if min(_dist_to(lp, end) for lp in hs.loops) < near:
            return "homoclinic"
    for c in cycles:
        if _dist_to(c.samples, end) < near:
            return "cycle"
    # slow approach to a weakly attracting point (or repelling one, backwards)
    pts = traj.states
    m = len(pts)
    if fps and m > 8:
        dist = [np.hypot(pts[:, 0] - p.location[0], pts[:, 1] - p.location[1]) for p in fps]
        j = int(np.argmin([dd[-1] for dd in dist]))
        dd = dist[j]
        if dd[m // 2:3 * m // 4].max() > dd[3 * m // 4:].max() * (1 + 1e-3) and dd[-1] < 0.1 * diam:
            target = fps[j]
            if (sgn > 0 and target.is_stable) or (sgn < 0 and not target.is_stable):
                return "fixed-slow"
    try:
        if sgn > 0:
            orb = find_limit_cycle(b, end, opts.tol, d, transient=opts.probe_time)
        else:
            # settle on the repeller backwards, then solve the forward return map
            rb = b.scaled(-1.0)
            back = integrate(rb, end, opts.probe_time, tol=1e-9)
            if not inside(back.final):
                return "exit"
            orb = find_limit_cycle(b, back.final, opts.tol, d, transient=0.0)
    except (NoRecurrenceError, IntegrationError):
        return "no-recurrence"
    if orb.size < 1e-3 * diam:
        return "no-recurrence"
    if any(hausdorff(orb.samples, c.samples) < 1e-3 * diam for c in cycles):
        return "cycle"
    if orb.stability == "Neutral":
        return "neutral-orbit"
    cycles.append(orb)
    return "new-cycle"
