from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lsweeps.sparse_direct import (
    FactorizationCache,
    SingularMatrixError,
    factorize,
    matrix_key,
    solve,
)


def random_diag_dominant(n, density, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr", dtype=float)
    A = A + 1j * sp.random(n, n, density=density, random_state=rng, format="csr")
    rowsum = np.asarray(abs(A).sum(axis=1)).ravel()
    return (A + sp.diags(rowsum + 1.0)).tocsc()


def test_identity():
    F = factorize(sp.identity(7, format="csc"))
    b = np.arange(7) + 1j
    np.testing.assert_array_equal(solve(F, b), b)
    np.testing.assert_array_equal(solve(F, np.zeros(7)), np.zeros(7))
    assert F.nnz >= 7


def test_tridiagonal_laplacian_against_dense():
    n = 5
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csc")
    Ainv = np.linalg.inv(A.toarray())
    F = factorize(A)
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1
        np.testing.assert_allclose(solve(F, e), Ainv[:, k], rtol=0, atol=1e-13)


def test_random_complex_against_dense():
    A = random_diag_dominant(200, 0.03, 0)
    b = np.random.default_rng(1).standard_normal(200) + 0j
    ref = np.linalg.solve(A.toarray(), b)
    x = solve(factorize(A), b)
    assert np.linalg.norm(x - ref) <= 1e-12 * np.linalg.norm(ref)


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 120), st.integers(0, 10_000))
def test_residual_property(n, seed):
    A = random_diag_dominant(n, 0.1, seed)
    b = np.random.default_rng(seed).standard_normal(n) + 1j
    x = solve(factorize(A), b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_local_helmholtz_residual(small2):
    from lsweeps.cdd import local_stencil

    lay = small2.layout
    for i, j in lay.subdomains():
        A = local_stencil(lay, i, j, small2.m_ext, small2.omega, small2.spec).to_csr()
        b = np.random.default_rng(i * 7 + j).standard_normal(A.shape[0]) + 0j
        x = solve(factorize(A), b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_deterministic_and_thread_safe():
    A = random_diag_dominant(300, 0.02, 5)
    F = factorize(A)
    rng = np.random.default_rng(0)
    rhs = [rng.standard_normal(300) + 1j * rng.standard_normal(300) for _ in range(16)]
    seq = [solve(F, b) for b in rhs]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda b: solve(F, b), rhs))
    for a, b in zip(seq, par):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(solve(F, rhs[0]), seq[0])


def test_singular_inputs():
    A = sp.csc_matrix(np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 2.0]]))
    with pytest.raises(SingularMatrixError) as exc:
        factorize(A)
    assert exc.value.index == 1
    B = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        factorize(B)
    with pytest.raises(ValueError):
        factorize(sp.csc_matrix((2, 3)))


def test_solve_rejects_wrong_length():
    F = factorize(sp.identity(4, format="csc"))
    with pytest.raises(ValueError):
        solve(F, np.ones(5))


def test_colamd_ordering_agrees():
    A = random_diag_dominant(150, 0.05, 9)
    b = np.ones(150, complex)
    x1 = solve(factorize(A), b)
    x2 = solve(factorize(A, ordering="COLAMD"), b)
    assert np.linalg.norm(x1 - x2) <= 1e-12 * np.linalg.norm(x1)


def test_cache_shares_identical_matrices():
    A = random_diag_dominant(50, 0.1, 2)
    cache = FactorizationCache()
    F1 = cache.get(A)
    F2 = cache.get(A.copy())
    assert F1 is F2 and cache.hits == 1 and cache.misses == 1
    B = A.copy()
    B[0, 0] += 1e-9
    assert cache.get(B) is not F1
    assert len(cache) == 2
    assert matrix_key(A) == matrix_key(A.tocsr()) != matrix_key(B)
    off = FactorizationCache(enabled=False)
    assert off.get(A) is not off.get(A)


def test_cache_returns_first_matrix():
    A = random_diag_dominant(30, 0.2, 5)
    cache = FactorizationCache()
    A1, F1 = cache.shared(A)
    A2, F2 = cache.shared(A.copy())
    assert A1 is A and A2 is A and F2 is F1
