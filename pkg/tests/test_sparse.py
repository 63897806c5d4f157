import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drifteig.sparse import (CsrMatrix, DimensionError, MaxIterReached, SolverBreakdown,
                             StagnationError, ZMatrixError, bicgstab, principal_eigenpair, spmv)

from oracles import random_z_matrix, semigroup_eigenvalue, thomas


def lap1d(n, neumann=False):
    a = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    if neumann:
        a[0, 0] = a[-1, -1] = 1.0
    return a


def test_csr_structure():
    m = CsrMatrix.from_coo([1, 0, 1, 1], [2, 1, 0, 2], [1.0, 2.0, 3.0, 4.0], 3)
    assert m.indptr.tolist() == [0, 1, 3, 3]
    assert m.indices.tolist() == [1, 0, 2]
    assert m.data.tolist() == [2.0, 3.0, 5.0]
    with pytest.raises(DimensionError):
        CsrMatrix.from_coo([3], [0], [1.0], 3)
    with pytest.raises(DimensionError):
        CsrMatrix.from_dense(np.zeros((2, 3)))


def test_spmv():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(spmv(CsrMatrix.identity(4), v), v)
    a = lap1d(4)
    assert np.allclose(spmv(CsrMatrix.from_dense(a), v), a @ v, rtol=0, atol=0)
    assert np.array_equal(spmv(CsrMatrix.from_dense(np.zeros((4, 4))), v), np.zeros(4))
    with pytest.raises(DimensionError):
        spmv(CsrMatrix.identity(3), v)


def test_bicgstab_diagonal():
    m = CsrMatrix.from_dense(np.diag([1.0, 4.0, 9.0]))
    x = bicgstab(m, [1.0, 2.0, 3.0], maxiter=2)
    assert np.allclose(x, [1.0, 0.5, 1 / 3], rtol=1e-14)


def test_bicgstab_matches_thomas():
    n = 100
    rng = np.random.default_rng(11)
    rhs = rng.normal(size=n)
    x = bicgstab(CsrMatrix.from_dense(lap1d(n)), rhs, tol=1e-14, maxiter=2000)
    ref = thomas(-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1), rhs)
    assert np.max(np.abs(x - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_bicgstab_incompatible_singular_system():
    m = CsrMatrix.from_dense(lap1d(30, neumann=True))
    rhs = np.ones(30)  # not orthogonal to the constant kernel
    with pytest.raises((MaxIterReached, SolverBreakdown)) as err:
        bicgstab(m, rhs, maxiter=200)
    assert err.value.best is not None


def test_eigenpair_diagonal():
    r = principal_eigenpair(CsrMatrix.from_dense(np.diag([3.0, 5.0, 7.0])))
    assert r.lam == pytest.approx(3.0, abs=1e-12)
    assert r.vector[0] == 1.0 and np.all(r.vector[1:] < 1e-8)


def test_eigenpair_neumann_laplacian_kernel():
    from drifteig.geometry import Rect, build_grid
    from drifteig.pde import assemble
    g = build_grid(Rect((0, 0), (1, 1)), 24)
    r = principal_eigenpair(assemble(g, None, 0.0, 0.0).matrix)
    assert abs(r.lam) <= 1e-10
    assert r.residual <= 1e-10
    assert np.ptp(r.vector) <= 1e-8


def test_z_matrix_required():
    with pytest.raises(ZMatrixError):
        principal_eigenpair(CsrMatrix.from_dense([[1.0, 0.5], [0.0, 2.0]]))


def test_power_only_budget_exhausted():
    L = random_z_matrix(50, np.random.default_rng(5), density=0.1)
    with pytest.raises(StagnationError):
        principal_eigenpair(CsrMatrix.from_dense(L), refine=False, max_sweeps=5)


@pytest.mark.parametrize("seed", range(10))
def test_semigroup_oracle(seed):
    L = random_z_matrix(200, np.random.default_rng(seed))
    r = principal_eigenpair(CsrMatrix.from_dense(L))
    assert abs(r.lam - semigroup_eigenvalue(L)) <= 1e-6
    assert np.all(r.vector > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_shift_covariance(seed, k):
    L = random_z_matrix(40, np.random.default_rng(seed), density=0.2)
    m = CsrMatrix.from_dense(L)
    assert principal_eigenpair(m.shift(k)).lam == pytest.approx(principal_eigenpair(m).lam + k,
                                                               abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_reported_residual_and_positivity(seed):
    L = random_z_matrix(60, np.random.default_rng(seed), density=0.1)
    m = CsrMatrix.from_dense(L)
    r = principal_eigenpair(m)
    again = np.max(np.abs(L @ r.vector - r.lam * r.vector)) / np.max(np.abs(r.vector))
    assert abs(again - r.residual) <= 1e-12
    assert r.vector.min() / r.vector.max() > 0
    assert r.vector.max() == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_transpose_consistency_symmetric(seed):
    L = random_z_matrix(50, np.random.default_rng(seed), density=0.1)
    S = 0.5 * (L + L.T)
    m = CsrMatrix.from_dense(S)
    assert principal_eigenpair(m).lam == pytest.approx(principal_eigenpair(m.transpose()).lam,
                                                       abs=1e-9)
