import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from porehomog.discretize import full_grid
from porehomog.linalg import (
    AssemblyError,
    SparseMatrix,
    assemble,
    cg_solve,
    minres_solve,
    project_mean_zero,
    saddle_minres,
    uzawa_solve,
)


def test_assemble_identity():
    A = assemble([(0, 0, 1.0), (1, 1, 1.0)], 2, 2)
    assert np.array_equal(A.toarray(), np.eye(2))
    assert list(A.row_offsets) == [0, 1, 2]


def test_assemble_sums_duplicates():
    A = assemble([(0, 0, 2.0), (0, 0, 3.0)], 1, 1)
    assert A.nnz == 1 and A.values[0] == 5.0


def test_assemble_symmetric_flag():
    A = assemble([(0, 1, 1.0), (0, 0, 4.0), (1, 0, 1.0), (1, 1, 3.0)], 2, 2, symmetric=True)
    assert A.symmetric and A.max_asymmetry() == 0.0
    with pytest.raises(AssemblyError):
        assemble([(0, 1, 1.0), (1, 0, 2.0)], 2, 2, symmetric=True)


def test_assemble_out_of_range_names_triplet():
    with pytest.raises(AssemblyError, match=r"triplet #1 \(2, 0"):
        assemble([(0, 0, 1.0), (2, 0, 1.0)], 2, 2)


def test_csr_invariants_after_cancellation():
    A = assemble([(0, 1, 1.0), (0, 1, -1.0), (0, 0, 1.0), (1, 1, 2.0)], 2, 2)
    assert A.nnz == 2
    for r in range(2):
        cols = A.col_indices[A.row_offsets[r]:A.row_offsets[r + 1]]
        assert np.all(np.diff(cols) > 0)


def test_cg_identity():
    x, rep = cg_solve(np.eye(2), np.array([1.0, 2.0]))
    assert np.allclose(x, [1, 2]) and rep.converged and rep.iterations <= 1


def test_cg_two_by_two_elimination():
    # [[4,1],[1,3]] x = (1,2): x2 = (2 - 1/4) / (3 - 1/4) = 7/11, x1 = (1 - x2) / 4 = 1/11
    A = SparseMatrix(sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]]), symmetric=True)
    x, rep = cg_solve(A, np.array([1.0, 2.0]), tol=1e-14)
    assert rep.converged
    assert np.allclose(x, [1 / 11, 7 / 11], atol=1e-14)


def _periodic_laplacian_1d(n: int) -> np.ndarray:
    L = 2 * np.eye(n) - np.roll(np.eye(n), 1, axis=1) - np.roll(np.eye(n), -1, axis=1)
    return L * n * n


def test_cg_periodic_laplacian_matches_pseudoinverse():
    n = 64
    L = _periodic_laplacian_1d(n)
    rng = np.random.default_rng(3)
    b = project_mean_zero(rng.standard_normal(n))
    x, rep = cg_solve(sp.csr_matrix(L), b, tol=1e-13, mean_zero=True)
    w, V = np.linalg.eigh(L)
    keep = w > 1e-8 * w.max()
    ref = V[:, keep] @ ((V[:, keep].T @ b) / w[keep])
    assert rep.converged
    assert np.abs(x - ref).max() < 1e-10


def test_cg_reports_nonconvergence():
    L = _periodic_laplacian_1d(64)
    b = project_mean_zero(np.arange(64.0))
    _, rep = cg_solve(sp.csr_matrix(L), b, tol=1e-14, max_iter=3, mean_zero=True)
    assert not rep.converged and rep.iterations == 3


def test_cg_zero_rhs():
    x, rep = cg_solve(np.eye(3), np.zeros(3))
    assert rep.converged and not x.any()


def test_minres_indefinite():
    A = np.array([[2.0, 1.0, 0.0], [1.0, -3.0, 1.0], [0.0, 1.0, 1.0]])
    b = np.array([1.0, 0.0, -1.0])
    x, rep = minres_solve(A, b, tol=1e-13)
    assert rep.converged
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-12)


def test_project_mean_zero_examples():
    assert np.array_equal(project_mean_zero(np.array([1.0, 1.0, 1.0])), [0, 0, 0])
    assert np.array_equal(project_mean_zero(np.array([1.0, 2.0, 3.0])), [-1, 0, 1])
    assert np.allclose(project_mean_zero(np.array([1.0, 2.0]), np.array([2.0, 1.0])), [-1 / 3, 2 / 3])
    with pytest.raises(ValueError):
        project_mean_zero(np.array([1.0]), np.array([0.0]))


@settings(max_examples=50, deadline=None)
@given(v=arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_project_mean_zero_property(v):
    out = project_mean_zero(v)
    assert abs(out.sum()) <= 1e-9 * (1 + np.abs(v).sum())
    assert np.allclose(project_mean_zero(out), out, atol=1e-9)


def _dense_saddle(A, B, f):
    """Direct LU solve of ``[[A, B^T, 0], [B, 0, 1], [0, 1^T, 0]]`` (mean-zero pressure)."""
    A, B = A.toarray(), B.toarray()
    nu, npp = A.shape[0], B.shape[0]
    K = np.zeros((nu + npp + 1, nu + npp + 1))
    K[:nu, :nu] = A
    K[:nu, nu:nu + npp] = B.T
    K[nu:nu + npp, :nu] = B
    K[nu:nu + npp, -1] = 1.0
    K[-1, nu:nu + npp] = 1.0
    sol = np.linalg.solve(K, np.concatenate([f, np.zeros(npp + 1)]))
    return sol[:nu], sol[nu:nu + npp]


def _box(n=8):
    g = full_grid(n, periodic=False)
    return g, g.A, g.B


def _shear_forcing(g):
    _, y = g.face_centres()
    return np.where(g.face_direction == 0, np.sin(2 * np.pi * y), 0.0)


@pytest.mark.parametrize("solver", ["minres", "cg", "richardson"])
def test_saddle_matches_dense_lu(solver):
    g, A, B = _box(8)
    for f in (g.pack_faces(np.ones(g.face_x_active.shape), np.zeros(g.face_y_active.shape)), _shear_forcing(g)):
        u_ref, p_ref = _dense_saddle(A, B, f)
        if solver == "minres":
            u, p, rep = saddle_minres(A, B, f, tol=1e-13)
        else:
            # the pressure Schur complement has spectrum in (0, 1], so step 1 is stable
            u, p, rep = uzawa_solve(A, B, f, tol=1e-11, method=solver, step=1.0, max_iter=20_000,
                                    inner_tol=1e-14)
        assert rep.converged
        assert np.abs(u - u_ref).max() < 1e-8
        assert np.abs(p - p_ref).max() < 1e-8


def test_saddle_zero_forcing():
    g, A, B = _box(6)
    u, p, rep = saddle_minres(A, B, np.zeros(A.n_rows))
    assert rep.converged and not u.any() and not p.any()
    u, p, rep = uzawa_solve(A, B, np.zeros(A.n_rows))
    assert rep.converged and not u.any() and not p.any()


def test_saddle_gradient_forcing_absorbed():
    g, A, B = _box(8)
    q = np.random.default_rng(1).standard_normal(B.n_rows)
    f = B.T @ q
    for u, p, rep in (saddle_minres(A, B, f, tol=1e-13), uzawa_solve(A, B, f, tol=1e-12)):
        assert rep.converged
        assert np.abs(u).max() < 1e-9
        assert np.abs(p - (q - q.mean())).max() < 1e-8


def test_uzawa_rejects_unknown_method():
    g, A, B = _box(4)
    with pytest.raises(ValueError):
        uzawa_solve(A, B, np.ones(A.n_rows), method="gauss")
