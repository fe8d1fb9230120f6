import numpy as np
import pytest
import scipy.sparse as sp

from nlbiot.solver import (CG, DIRECT, NonConvergence, SolverConfig, SolverError, factorize,
                           solve_spd)


def laplace_2d(n, shift=0.0):
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return (sp.kron(t, eye) + sp.kron(eye, t) + shift * sp.identity(n * n)).tocsr()


def test_identity():
    b = np.arange(5.0)
    assert np.array_equal(solve_spd(sp.identity(5), b), b)


def test_two_by_two():
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]])
    x = solve_spd(A, [1.0, 2.0])
    assert np.allclose(x, [1 / 11, 7 / 11], rtol=1e-14)


@pytest.mark.parametrize("method", [DIRECT, CG])
def test_matches_dense_oracle(method):
    A = laplace_2d(12, shift=0.1)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x = solve_spd(A, b, SolverConfig(method))
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_cg_agrees_with_direct():
    A = laplace_2d(20, shift=1e-3)
    b = np.random.default_rng(1).standard_normal(A.shape[0])
    xd = solve_spd(A, b)
    xc = solve_spd(A, b, SolverConfig(CG))
    assert np.linalg.norm(xc - xd) <= 1e-8 * np.linalg.norm(xd)


def test_residual_contract_recorded():
    A = laplace_2d(15, shift=0.5)
    fac = factorize(A)
    b = np.ones(A.shape[0])
    x = fac.solve(b)
    assert fac.last_residual <= 1e-12
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_zero_rhs():
    assert not np.any(solve_spd(laplace_2d(4), np.zeros(16)))


def test_indefinite_matrix_reports_pivot():
    A = sp.diags([1.0, 2.0, -1.0, 3.0]).tocsr()
    with pytest.raises(SolverError) as err:
        factorize(A)
    assert err.value.pivot is not None


def test_cg_iteration_cap():
    A = laplace_2d(30)
    b = np.random.default_rng(2).standard_normal(A.shape[0])
    with pytest.raises(NonConvergence) as err:
        solve_spd(A, b, SolverConfig(CG, max_iter=3))
    assert err.value.iterations <= 3


def test_factorization_reused():
    A = laplace_2d(8, shift=1.0)
    fac = factorize(A)
    B = np.random.default_rng(3).standard_normal((A.shape[0], 3))
    for col in B.T:
        assert np.allclose(A @ fac.solve(col), col, atol=1e-12)


@pytest.mark.parametrize("kwargs", [{"method": "lu"}, {"rel_tol": 0.0}, {"max_iter": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_non_square():
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix(np.ones((2, 3))))
