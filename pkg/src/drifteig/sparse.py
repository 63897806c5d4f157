"""CSR matrices, BiCGSTAB, and the Perron eigen-iteration for Z-matrices.

The principal eigenpair of a Z-matrix ``L`` (nonpositive off-diagonals) is the
eigenvalue of least real part together with its positive eigenvector.  With
``s = max(diag L) + 1`` the matrix ``B = s I - L`` is entrywise nonnegative,
so its Perron vector is the principal eigenvector of ``L`` and
``lambda = s - rho(B)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "CsrMatrix", "EigenResult", "SparseError", "DimensionError", "SolverBreakdown",
    "MaxIterReached", "StagnationError", "PositivityError", "ZMatrixError",
    "spmv", "bicgstab", "principal_eigenpair", "collatz_wielandt",
]

log = logging.getLogger(__name__)


class SparseError(RuntimeError):
    pass


class DimensionError(SparseError, ValueError):
    pass


class ZMatrixError(SparseError, ValueError):
    pass


class SolverBreakdown(SparseError):
    def __init__(self, message, best, residual, iterations):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class MaxIterReached(SolverBreakdown):
    pass


class StagnationError(SparseError):
    pass


class PositivityError(SparseError):
    pass


@dataclass(frozen=True)
class CsrMatrix:
    """Square matrix in compressed sparse row form with sorted, unique columns."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    _rows: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError("matrix dimension must be >= 1")
        if len(self.indptr) != self.n + 1 or np.any(np.diff(self.indptr) < 0):
            raise DimensionError("row offsets must be monotone with length n + 1")
        if self._rows is None:
            object.__setattr__(self, "_rows", np.repeat(np.arange(self.n), np.diff(self.indptr)))

    @classmethod
    def from_coo(cls, rows, cols, vals, n: int) -> "CsrMatrix":
        """Build from triplets, summing duplicates; explicit zeros are kept."""
        rows = np.asarray(rows, np.int64)
        cols = np.asarray(cols, np.int64)
        vals = np.asarray(vals, float)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise DimensionError("triplet index out of range")
        key = rows * n + cols
        order = np.argsort(key, kind="stable")
        key, vals = key[order], vals[order]
        uniq, start = np.unique(key, return_index=True)
        summed = np.add.reduceat(vals, start) if vals.size else vals
        r = uniq // n
        indptr = np.zeros(n + 1, np.int64)
        np.add.at(indptr, r + 1, 1)
        return cls(np.cumsum(indptr), (uniq % n).astype(np.int64), summed, n)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("matrix must be square")
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape[0])

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float), m.shape[0])

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), n)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self._rows, self.indices] = self.data
        return a

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        on = self._rows == self.indices
        d[self._rows[on]] = self.data[on]
        return d

    def shift(self, k: float) -> "CsrMatrix":
        """``self + k I``."""
        rows = np.concatenate([self._rows, np.arange(self.n)])
        cols = np.concatenate([self.indices, np.arange(self.n)])
        vals = np.concatenate([self.data, np.full(self.n, float(k))])
        return CsrMatrix.from_coo(rows, cols, vals, self.n)

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_coo(self.indices, self._rows, self.data, self.n)

    def row_sums(self) -> np.ndarray:
        return np.bincount(self._rows, weights=self.data, minlength=self.n)

    def is_z_matrix(self) -> bool:
        off = self._rows != self.indices
        return bool(np.all(self.data[off] <= 0))

    def __matmul__(self, v):
        return spmv(self, v)

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))

    __hash__ = None


def spmv(m: CsrMatrix, v) -> np.ndarray:
    v = np.asarray(v, float)
    if v.shape != (m.n,):
        raise DimensionError(f"vector of shape {v.shape} does not match matrix of size {m.n}")
    return np.bincount(m._rows, weights=m.data * v[m.indices], minlength=m.n)


# --------------------------------------------------------------------------- #
# BiCGSTAB
# --------------------------------------------------------------------------- #

def bicgstab(m: CsrMatrix, rhs, tol: float = 1e-10, maxiter: int = 1000,
             precond: str | None = "jacobi", x0=None, restarts: int = 3) -> np.ndarray:
    """Solve ``m x = rhs`` by right-preconditioned BiCGSTAB.

    Returns ``x`` with ``||m x - rhs|| <= tol ||rhs||``.  On breakdown the
    shadow residual is reset to the current residual up to ``restarts`` times.

    Raises
    ------
    SolverBreakdown
        ``rho`` or ``omega`` vanished too often; carries the best iterate.
    MaxIterReached
        Tolerance not reached in ``maxiter`` iterations; carries the best iterate.
    """
    if tol < 1e-14:
        raise ValueError("tol must be >= 1e-14")
    b = np.asarray(rhs, float)
    if b.shape != (m.n,):
        raise DimensionError("right-hand side does not match matrix")
    if precond == "jacobi":
        d = m.diagonal()
        dinv = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 1.0)
    elif precond is None:
        dinv = None
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    def K(y):
        return y * dinv if dinv is not None else y

    bnorm = np.linalg.norm(b)
    x = np.zeros(m.n) if x0 is None else np.array(x0, float)
    r = b - spmv(m, x)
    if bnorm == 0:
        bnorm = 1.0
        if np.linalg.norm(r) == 0:
            return x
    target = tol * bnorm
    best, best_res = x.copy(), np.linalg.norm(r)
    if best_res <= target:
        return x
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(m.n)
    p = np.zeros(m.n)
    tiny = np.finfo(float).eps ** 2
    breakdowns = 0
    for it in range(1, maxiter + 1):
        rho_new = rhat @ r
        if abs(rho_new) <= tiny * np.linalg.norm(rhat) * np.linalg.norm(r) or omega == 0:
            breakdowns += 1
            if breakdowns > restarts:
                raise SolverBreakdown("BiCGSTAB breakdown (rho ~ 0)", best, best_res, it)
            rhat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            rho_new = rhat @ r
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        y = K(p)
        v = spmv(m, y)
        denom = rhat @ v
        if denom == 0:
            breakdowns += 1
            if breakdowns > restarts:
                raise SolverBreakdown("BiCGSTAB breakdown (rhat . v = 0)", best, best_res, it)
            rhat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            continue
        alpha = rho_new / denom
        x = x + alpha * y
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= target:
            return x
        z = K(s)
        t = spmv(m, z)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + omega * z
        r = s - omega * t
        rho = rho_new
        res = np.linalg.norm(r)
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= target:
            # guard against drift of the recursively updated residual
            true_res = np.linalg.norm(b - spmv(m, x))
            if true_res <= target:
                return x
            r = b - spmv(m, x)
    raise MaxIterReached(f"BiCGSTAB did not converge in {maxiter} iterations "
                         f"(residual {best_res:.3e}, target {target:.3e})", best, best_res, maxiter)


# --------------------------------------------------------------------------- #
# principal eigenpair
# --------------------------------------------------------------------------- #

@dataclass
class EigenResult:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int
    method: str  # "Power" or "InverseRefined"
    diagnostics: dict = field(default_factory=dict)


def collatz_wielandt(m: CsrMatrix, v: np.ndarray, significant: float = 1e-6):
    """Ratios ``(m v)_i / v_i`` over entries with ``v_i >= significant * max v``.

    For positive ``v`` and irreducible Z-matrix ``m`` the minimum and maximum
    over all entries bracket the principal eigenvalue.
    """
    mv = spmv(m, v)
    keep = v >= significant * v.max()
    return mv[keep] / v[keep]


def _estimate(m, v):
    q = collatz_wielandt(m, v)
    return float(np.median(q)), float(q.min()), float(q.max())


def _residual(m, v, lam):
    return float(np.max(np.abs(spmv(m, v) - lam * v)) / np.max(np.abs(v)))


def principal_eigenpair(m: CsrMatrix, tol: float = 1e-8, refine: bool = True,
                        power_iters: int | None = None, max_sweeps: int = 100000,
                        solver: str = "lu", v0=None, check_z: bool = True) -> EigenResult:
    """Principal eigenpair of the Z-matrix ``m``.

    Phase one is power iteration on ``s I - m``.  With ``refine`` the vector is
    then polished by shifted inverse iteration on ``m - mu I``, the shift being
    ``median - 0.1 * spread`` of the Collatz-Wielandt ratios, clamped below
    their minimum so that ``m - mu I`` stays a nonsingular M-matrix.

    Parameters
    ----------
    tol : float
        Target for ``||m v - lam v||_inf / ||v||_inf``.
    refine : bool
        Run the inverse-iteration phase.  Without it, power iteration runs to
        convergence, which is only practical for well-separated spectra.
    power_iters : int, optional
        Number of power sweeps before refinement (default 30).
    solver : {"lu", "bicgstab"}
        Linear solver for the refinement phase.
    """
    if check_z and not m.is_z_matrix():
        raise ZMatrixError("matrix has positive off-diagonal entries")
    n = m.n
    diag = m.diagonal()
    s = float(diag.max()) + 1.0
    v = np.ones(n) if v0 is None else np.array(v0, float)
    if np.any(v <= 0):
        raise ValueError("initial vector must be positive")
    v /= v.max()

    lam, lo, hi = _estimate(m, v)
    res = _residual(m, v, lam)
    history = [res]
    it = 0
    if res <= tol and hi - lo <= tol:
        return EigenResult(lam, v, res, 0, "Power", {"shift": s, "history": history})

    n_power = (30 if power_iters is None else power_iters) if refine else max_sweeps
    lam_prev = lam
    for it in range(1, n_power + 1):
        w = s * v - spmv(m, v)
        v = w / w.max()
        lam, lo, hi = _estimate(m, v)
        res = _residual(m, v, lam)
        history.append(res)
        if res <= tol and abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return _finish(m, v, lam, res, it, "Power", {"shift": s, "history": history})
        lam_prev = lam
        if not refine and it % 200 == 0 and not history[-1] < 0.1 * history[-201]:
            raise StagnationError(
                f"power iteration residual stalled at {res:.3e} after {it} sweeps; enable refine")
    if not refine:
        raise StagnationError(f"power iteration did not converge in {max_sweeps} sweeps")

    # phase two: shifted inverse iteration
    mats = m.to_scipy().tocsc()
    eye = sp.identity(n, format="csc")
    mu = None
    factor = None
    factorizations = 0
    sweeps = 0
    best = (res, lam, v.copy())
    while True:
        sweeps += 1
        # a collapsed bracket (reducible matrix, negligible entries) must not put mu on lam
        spread = max(hi - lo, 1e-6 * max(1.0, abs(lam)))
        mu_new = min(lam - 0.1 * spread, lo - 1e-3 * spread)
        if mu is None or (lam - mu_new) < 0.5 * (lam - mu):
            mu = mu_new
            if solver == "lu":
                factor = spla.splu(mats - mu * eye)
            factorizations += 1
        if solver == "lu":
            w = factor.solve(v)
        elif solver == "bicgstab":
            shifted = CsrMatrix.from_scipy(mats - mu * eye)
            w = bicgstab(shifted, v, tol=1e-12, maxiter=20 * n, x0=v)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        k = int(np.argmax(np.abs(w)))
        v = w / w[k]
        v = np.maximum(v, 0.0)
        lam_new, lo, hi = _estimate(m, v)
        res = _residual(m, v, lam_new)
        history.append(res)
        if res < best[0]:
            best = (res, lam_new, v.copy())
        converged = res <= tol and abs(lam_new - lam) <= tol * max(1.0, abs(lam_new))
        lam = lam_new
        if converged:
            break
        if sweeps >= 200 and not min(history[-200:]) < 0.1 * history[-200]:
            raise StagnationError(f"inverse iteration residual stalled at {res:.3e}")
        if sweeps >= max_sweeps:
            raise StagnationError(f"inverse iteration did not converge in {max_sweeps} sweeps")
    diag_info = {"shift": s, "mu": mu, "factorizations": factorizations,
                 "power_sweeps": it, "inverse_sweeps": sweeps, "history": history}
    return _finish(m, v, lam, res, it + sweeps, "InverseRefined", diag_info)


def _finish(m, v, lam, res, iterations, method, info):
    # one nonnegative sweep of s I - m restores strict positivity lost to rounding
    if np.any(v <= 0):
        s = info["shift"]
        w = s * v - spmv(m, v)
        w = np.maximum(w, 0.0)
        v = w / w.max()
        lam, _, _ = _estimate(m, v)
        res = _residual(m, v, lam)
    if np.any(v <= 0):
        raise PositivityError(f"{int(np.sum(v <= 0))} entries of the eigenvector are not positive")
    info["min_entry"] = float(v.min())
    return EigenResult(float(lam), v, float(res), int(iterations), method, info)
