"""Finite-volume assembly of ``-Lap - A b.grad + c`` and its principal eigenpair.

Each face between two cells (or a cell and a Dirichlet ghost at half-cell
distance ``d``) couples them with the weight

    w = B(-A (b.e) d) / (h d)          exponential fitting (Scharfetter-Gummel)
    w = (1 + max(A (b.e) d, 0)) / (h d) first-order upwind

where ``e`` is the unit vector from the cell to its neighbour, ``h`` the cell
width along ``e`` and ``B(z) = z / (exp(z) - 1)``.  The resulting matrix is a
Z-matrix whose rows sum to ``c`` under pure Neumann conditions.

Also hosts the one-dimensional Sturm-Liouville solver shared with the
closed-orbit-family reduction, and the Robin matching problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import PlanarField, ScalarField
from .geometry import Grid
from .sparse import CsrMatrix, EigenResult, ZMatrixError, principal_eigenpair

__all__ = [
    "BoundarySpec", "Discretization", "bernoulli", "assemble", "principal_eigenvalue",
    "solve_1d", "robin_match", "RobinMatch", "WeightError", "MatchError",
]

SCHEMES = ("exponential", "upwind")


class WeightError(ValueError):
    """A Sturm-Liouville weight is non-positive or non-finite where it must not be."""


class MatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition per boundary face.

    ``predicate(mid, normal)`` returns ``True`` where the face is Dirichlet;
    it is only consulted for ``kind == "mixed"``.
    """

    kind: str = "neumann"
    predicate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("neumann", "dirichlet", "mixed"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "mixed" and self.predicate is None:
            raise ValueError("mixed boundary needs a face predicate")

    @classmethod
    def neumann(cls) -> "BoundarySpec":
        return cls("neumann")

    @classmethod
    def dirichlet(cls) -> "BoundarySpec":
        return cls("dirichlet")

    @classmethod
    def dirichlet_sector(cls, center, theta0: float, theta1: float) -> "BoundarySpec":
        """Dirichlet on faces whose polar angle about ``center`` lies in ``[theta0, theta1]``.

        Angles are in radians; the sector may wrap through ``+-pi``.
        """
        c = np.asarray(center, float)
        t0, t1 = float(theta0), float(theta1)

        def pred(mid, normal):
            ang = np.arctan2(mid[:, 1] - c[1], mid[:, 0] - c[0])
            return np.mod(ang - t0, 2 * np.pi) <= np.mod(t1 - t0, 2 * np.pi)

        return cls("mixed", pred, f"dirichlet on sector [{t0:g}, {t1:g}] about {tuple(c)}")

    def dirichlet_faces(self, mid: np.ndarray, normal: np.ndarray) -> np.ndarray:
        if self.kind == "neumann":
            return np.zeros(len(mid), bool)
        if self.kind == "dirichlet":
            return np.ones(len(mid), bool)
        flags = np.asarray(self.predicate(mid, normal), bool)
        if flags.shape != (len(mid),):
            raise ValueError("boundary predicate must return one flag per face")
        return flags


@dataclass
class Discretization:
    grid: Grid
    matrix: CsrMatrix
    A: float
    scheme: str
    bc: BoundarySpec
    dirichlet_faces: int = 0


def bernoulli(z) -> np.ndarray:
    """``z / (exp(z) - 1)`` with the series ``1 - z/2 + z^2/12`` near zero."""
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-4
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = z / np.expm1(np.where(small, 1.0, z))
    out = np.where(small, 1.0 - z / 2.0 + z * z / 12.0, big)
    return np.where(np.isnan(out) & (z > 0), 0.0, out)


def _face_weights(bn, A, h, d, scheme):
    """Weights for the row of the cell whose outward face velocity is ``bn``."""
    p = A * bn * d
    if scheme == "exponential":
        return bernoulli(-p) / (h * d)
    if scheme == "upwind":
        return (1.0 + np.maximum(p, 0.0)) / (h * d)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def assemble(grid: Grid, b: PlanarField | None, A: float, c: ScalarField | float,
             bc: BoundarySpec | None = None, scheme: str = "exponential") -> Discretization:
    """Assemble the Z-matrix of ``-Lap phi - A b.grad phi + c phi`` on ``grid``."""
    if not np.isfinite(A) or A < 0:
        raise ValueError("drift rate A must be finite and >= 0")
    bc = bc or BoundarySpec.neumann()
    n = grid.size
    hs = np.array([grid.h1, grid.h2])

    # interior faces
    mid = grid.face_mid
    if b is not None and A != 0:
        b1, b2 = b(mid[:, 0], mid[:, 1])
        bn = np.where(grid.face_axis == 0, b1, b2)
    else:
        bn = np.zeros(len(mid))
    h = hs[grid.face_axis]
    w_lo = _face_weights(bn, A, h, h, scheme)
    w_hi = _face_weights(-bn, A, h, h, scheme)

    rows = [grid.face_lo, grid.face_hi, grid.face_lo, grid.face_hi]
    cols = [grid.face_hi, grid.face_lo, grid.face_lo, grid.face_hi]
    vals = [-w_lo, -w_hi, w_lo, w_hi]

    # Dirichlet boundary faces: ghost value zero at half-cell distance
    flags = bc.dirichlet_faces(grid.bface_mid, grid.bface_normal)
    if flags.any():
        cell = grid.bface_cell[flags]
        bmid = grid.bface_mid[flags]
        nrm = grid.bface_normal[flags]
        if b is not None and A != 0:
            b1, b2 = b(bmid[:, 0], bmid[:, 1])
            bnb = b1 * nrm[:, 0] + b2 * nrm[:, 1]
        else:
            bnb = np.zeros(len(cell))
        hb = np.where(nrm[:, 0] != 0, grid.h1, grid.h2)
        wb = _face_weights(bnb, A, hb, hb / 2.0, scheme)
        rows.append(cell); cols.append(cell); vals.append(wb)

    if isinstance(c, ScalarField):
        cv = np.asarray(c(grid.centers[:, 0], grid.centers[:, 1]), float)
        cv = np.broadcast_to(cv, (n,))
    else:
        cv = np.full(n, float(c))
    if not np.all(np.isfinite(cv)):
        raise ValueError("potential c is not finite on the grid")
    rows.append(np.arange(n)); cols.append(np.arange(n)); vals.append(cv)

    vals = np.concatenate(vals)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite matrix entries (drift not finite on the grid?)")
    m = CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), vals, n)
    if not m.is_z_matrix():
        raise ZMatrixError("assembled operator is not a Z-matrix")
    return Discretization(grid, m, float(A), scheme, bc, int(flags.sum()))


def principal_eigenvalue(grid: Grid, b: PlanarField | None, A: float, c, bc: BoundarySpec | None = None,
                         scheme: str = "exponential", tol: float = 1e-8, **opts) -> EigenResult:
    """Principal eigenvalue and positive eigenvector of the discrete operator."""
    disc = assemble(grid, b, A, c, bc, scheme)
    res = principal_eigenpair(disc.matrix, tol=tol, **opts)
    res.diagnostics.update({"A": float(A), "n": grid.n1, "unknowns": grid.size, "scheme": scheme,
                            "bc": (bc or BoundarySpec.neumann()).kind})
    return res


# --------------------------------------------------------------------------- #
# one-dimensional Sturm-Liouville problems
# --------------------------------------------------------------------------- #

def _bc_tuple(bc):
    if isinstance(bc, str):
        if bc not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown end condition {bc!r}")
        return bc, 0.0
    kind, r = bc
    if kind != "robin":
        raise ValueError(f"unknown end condition {bc!r}")
    return "robin", float(r)


def sl_matrices(kappa, gamma, mu, length: float, left="neumann", right="neumann"):
    """Tridiagonal stiffness ``K`` (with Robin terms and potential) and lumped mass ``M``.

    Returns ``(lower, diag, upper, mass, free)`` restricted to the free nodes.
    Node masses use the weights ``(1, 6, 1) h / 8`` (``(3, 1) h / 8`` at the
    ends), which stay positive when ``mu`` vanishes at an endpoint.
    """
    kappa = np.asarray(kappa, float)
    gamma = np.asarray(gamma, float)
    mu = np.asarray(mu, float)
    N1 = len(kappa)
    if not (len(gamma) == N1 and len(mu) == N1):
        raise ValueError("coefficient arrays must have equal length")
    if N1 < 16:
        raise ValueError("need at least 16 samples")
    if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(gamma))):
        raise WeightError("non-finite Sturm-Liouville coefficient")
    if np.any(kappa[1:-1] <= 0) or np.any(mu[1:-1] <= 0) or np.any(kappa < 0) or np.any(mu < 0):
        raise WeightError("kappa and mu must be positive in the interior and nonnegative at the ends")
    h = length / (N1 - 1)
    lk, rk = _bc_tuple(left), _bc_tuple(right)

    kf = 0.5 * (kappa[1:] + kappa[:-1])  # face values

    def lump(f):
        m = np.empty(N1)
        m[1:-1] = h * (f[:-2] + 6.0 * f[1:-1] + f[2:]) / 8.0
        m[0] = h * (3.0 * f[0] + f[1]) / 8.0
        m[-1] = h * (3.0 * f[-1] + f[-2]) / 8.0
        return m

    M = lump(mu)
    G = lump(gamma)
    diag = G.copy()
    diag[:-1] += kf / h
    diag[1:] += kf / h
    off = -kf / h
    if lk[0] == "robin":
        diag[0] -= kappa[0] * lk[1]
    if rk[0] == "robin":
        diag[-1] += kappa[-1] * rk[1]
    free = np.ones(N1, bool)
    if lk[0] == "dirichlet":
        free[0] = False
    if rk[0] == "dirichlet":
        free[-1] = False
    if np.any(M[free] <= 0):
        raise WeightError("non-positive lumped mass")
    idx = np.nonzero(free)[0]
    lo_i, hi_i = idx[0], idx[-1]
    return off[lo_i:hi_i], diag[free], off[lo_i:hi_i], M[free], free


def solve_1d(kappa, gamma, mu, length: float, left="neumann", right="neumann",
             tol: float = 1e-10):
    """Smallest eigenvalue of ``-(kappa u')' + gamma u = lam mu u`` on ``[0, length]``.

    Coefficients are sampled on the uniform node grid ``linspace(0, length, N)``.
    End conditions are ``"neumann"``, ``"dirichlet"`` or ``("robin", r)``,
    the latter meaning ``u' + r u = 0`` at that end.

    Returns
    -------
    lam : float
    u : ndarray
        Positive eigenfunction on the node grid (zero at Dirichlet ends), max 1.
    result : EigenResult
    """
    lower, diag, upper, mass, free = sl_matrices(kappa, gamma, mu, length, left, right)
    m = len(diag)
    rows = np.concatenate([np.arange(m), np.arange(1, m), np.arange(m - 1)])
    cols = np.concatenate([np.arange(m), np.arange(m - 1), np.arange(1, m)])
    vals = np.concatenate([diag / mass, lower / mass[1:], upper / mass[:-1]])
    op = CsrMatrix.from_coo(rows, cols, vals, m)
    res = principal_eigenpair(op, tol=max(tol, 1e-13 * float(np.abs(vals).max())), power_iters=5)
    u = np.zeros(len(free))
    u[free] = res.vector
    return res.lam, u / u.max(), res


# --------------------------------------------------------------------------- #
# Robin matching along a homoclinic loop
# --------------------------------------------------------------------------- #

@dataclass
class RobinMatch:
    alpha: float
    lam: float
    mismatch: float
    u: np.ndarray
    bisections: int
    alpha_max: float


def _robin_problem(A, y, absb, c, eps, alpha, n):
    L = float(y[-1] - y[0])
    grid = np.linspace(y[0], y[-1], n)
    bb = np.interp(grid, y, absb)
    cc = np.interp(grid, y, c)
    # exponent A * int_0^y |b|, shifted so the weight peaks at one
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (bb[1:] + bb[:-1]) * np.diff(grid))])
    w = np.exp(A * (cum - cum[-1]))
    lam, u, _ = solve_1d(w, cc * w, w, L, ("robin", min(alpha, eps)), ("robin", alpha))
    return lam, u


def robin_match(A: float, y, absb, c, eps: float = 0.1, n: int = 513,
                alpha_max: float = 1.0, tol: float = 1e-10) -> RobinMatch:
    """Find ``alpha`` with ``phi(0) = phi(L)`` for the loop problem

        -phi'' - A |b| phi' + c phi = lam phi  on (0, L),
        phi'(0) + min(alpha, eps) phi(0) = 0,  phi'(L) + alpha phi(L) = 0,

    by bisection on ``g(alpha) = phi(0) - phi(L)`` (``phi`` max-normalised).
    ``alpha_max`` is doubled up to ``2**10`` times to bracket a sign change.
    """
    y = np.asarray(y, float)
    absb = np.asarray(absb, float)
    c = np.broadcast_to(np.asarray(c, float), y.shape)
    floor = 1e-8 * float(np.max(absb)) if np.max(absb) > 0 else 0.0
    absb = np.maximum(absb, floor)

    def g(alpha):
        lam, u = _robin_problem(A, y, absb, c, eps, alpha, n)
        return u[0] - u[-1], lam, u

    g0, lam0, u0 = g(0.0)
    if abs(g0) <= 1e-8:
        return RobinMatch(0.0, lam0, g0, u0, 0, 0.0)
    hi = float(alpha_max)
    for _ in range(11):
        ghi, lamhi, uhi = g(hi)
        if np.sign(ghi) != np.sign(g0):
            break
        hi *= 2.0
    else:
        raise MatchError(f"g(alpha) keeps one sign on [0, {hi / 2:g}]")
    lo, glo = 0.0, g0
    steps = 0
    mid, gm, lam, u = hi, ghi, lamhi, uhi
    while hi - lo > tol * max(1.0, hi) and steps < 200:
        steps += 1
        mid = 0.5 * (lo + hi)
        gm, lam, u = g(mid)
        if gm == 0 or abs(gm) <= 1e-12:
            break
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid
    return RobinMatch(mid, lam, gm, u, steps, hi)
