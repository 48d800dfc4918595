import threading

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from bilinear_cg.fem import assemble_coarse_laplacian, assemble_mass, assemble_stiffness
from bilinear_cg.linalg import Factorization, FactorizationError, factorize, solve
from bilinear_cg.mesh import build_unit_square_mesh, interior_dof_map


@pytest.fixture(scope="module")
def m3():
    return build_unit_square_mesh(3)


def residual_ok(A, x, b, tol=1e-10):
    r = np.linalg.norm(A @ x - b)
    return r <= tol * (sp.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))


def test_identity():
    f = Factorization(sp.identity(5, format="csc"), spd=True)
    b = np.arange(5.0)
    assert np.array_equal(solve(f, b), b)


def test_coarse_laplacian_round_trip(m3):
    op = assemble_coarse_laplacian(m3)
    f = factorize(op)
    b = np.random.default_rng(0).standard_normal(op.shape[0])
    x = solve(f, b)
    assert np.linalg.norm(op.matrix @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_zero_matrix_is_singular():
    with pytest.raises(FactorizationError) as info:
        Factorization(sp.csc_matrix((2, 2)))
    assert info.value.pivot == 0


def test_singular_pivot_is_reported():
    A = sp.csc_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(FactorizationError) as info:
        Factorization(A)
    assert info.value.pivot == 1


def test_zero_rhs(m3):
    f = factorize(assemble_mass(m3))
    assert np.array_equal(f.solve(np.zeros(m3.n_fine)), np.zeros(m3.n_fine))


def test_mass_consistency(m3):
    op = assemble_mass(m3)
    x = factorize(op).solve(op.matrix @ np.ones(m3.n_fine))
    assert np.abs(x - 1.0).max() < 1e-12


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_interior_stiffness_random_rhs(seed):
    m = build_unit_square_mesh(3)
    idx = interior_dof_map(m, "fine")
    K = assemble_stiffness(m).matrix[idx][:, idx]
    b = np.random.default_rng(seed).standard_normal(len(idx))
    x = Factorization(K, spd=True).solve(b)
    assert np.linalg.norm(K @ x - b) / np.linalg.norm(b) <= 1e-10
    assert residual_ok(K, x, b)


def test_dimension_mismatch(m3):
    f = factorize(assemble_mass(m3))
    with pytest.raises(ValueError):
        f.solve(np.ones(3))


def test_non_square_rejected():
    with pytest.raises(ValueError):
        Factorization(sp.csc_matrix(np.ones((2, 3))))


def test_operator_unchanged(m3):
    op = assemble_mass(m3)
    before = op.matrix.copy()
    factorize(op)
    assert (op.matrix != before).nnz == 0


def test_nonsymmetric_lu():
    A = sp.csc_matrix(np.array([[4.0, 1.0], [2.0, 3.0]]))
    x = Factorization(A).solve(np.array([1.0, 2.0]))
    assert np.allclose(A @ x, [1.0, 2.0], atol=1e-14)


def test_ordering_independence(m3):
    # symmetric-mode and general LU agree to well below 1e-10
    op = assemble_mass(m3)
    b = np.random.default_rng(1).standard_normal(m3.n_fine)
    x1 = Factorization(op.matrix, spd=True).solve(b)
    x2 = Factorization(op.matrix, spd=False).solve(b)
    assert np.linalg.norm(x1 - x2) <= 1e-10 * np.linalg.norm(x1)


def test_multiple_right_hand_sides(m3):
    op = assemble_mass(m3)
    B = np.random.default_rng(2).standard_normal((m3.n_fine, 3))
    X = factorize(op).solve(B)
    assert np.allclose(op.matrix @ X, B, atol=1e-10)


def test_concurrent_solves_agree(m3):
    f = factorize(assemble_mass(m3))
    rhs = np.random.default_rng(3).standard_normal((8, m3.n_fine))
    expected = [f.solve(b) for b in rhs]
    out = [None] * len(rhs)

    def work(k):
        out[k] = f.solve(rhs[k])

    threads = [threading.Thread(target=work, args=(k,)) for k in range(len(rhs))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for a, b in zip(out, expected):
        assert np.array_equal(a, b)
