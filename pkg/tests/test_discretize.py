import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from porehomog.discretize import full_grid, grid_from_mask
from porehomog.geometry import CellGeometry, build_cell_mask


def _neumann_laplacian_1d(n: int, h: float) -> np.ndarray:
    L = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    L[0, 0] = L[-1, -1] = 1.0
    return L / h**2


def test_box_laplacian_is_kronecker_neumann():
    n = 6
    g = full_grid(n)
    L1 = _neumann_laplacian_1d(n, g.h)
    ref = np.kron(L1, np.eye(n)) + np.kron(np.eye(n), L1)
    assert np.allclose(g.L.toarray(), ref, atol=0, rtol=1e-15)


def test_periodic_laplacian_annihilates_constants():
    g = grid_from_mask(build_cell_mask(CellGeometry.disc(0.25), 16), periodic=True)
    assert np.abs(g.L @ np.ones(g.n_cells)).max() == 0.0
    assert g.L.max_asymmetry() == 0.0


def test_gradient_of_linear_field():
    g = full_grid(8)
    x, y = g.cell_centres()
    grad = g.grad(3.0 * x - 2.0 * y)
    assert np.allclose(grad[g.face_direction == 0], 3.0)
    assert np.allclose(grad[g.face_direction == 1], -2.0)


def test_divergence_of_gradient_is_minus_laplacian():
    g = full_grid(8)
    c = np.random.default_rng(0).standard_normal(g.n_cells)
    assert np.allclose(g.div(g.grad(c)), -(g.L @ c))


def test_box_has_no_wraparound_faces():
    g = full_grid(5)
    assert not g.face_x_active[-1].any() and not g.face_y_active[:, -1].any()
    assert g.n_faces == 2 * 5 * 4


def test_velocity_laplacian_spd():
    for g in (full_grid(6), grid_from_mask(build_cell_mask(CellGeometry.disc(0.3), 12), periodic=True)):
        A = g.A.toarray()
        assert np.array_equal(A, A.T)
        assert np.linalg.eigvalsh(A).min() > 0.0


def test_velocity_laplacian_tangential_wall():
    # a single x-face row in a channel of one cell height: both tangential neighbours are walls
    act = np.zeros((4, 4), dtype=bool)
    act[:, 1] = True
    g = grid_from_mask(type("M", (), {"cell_active": act, "h": 0.25})(), periodic=True)
    A = g.A.toarray()
    d = np.diag(A)[: g.n_fx]
    # two normal neighbours (1/h^2 each) plus two ghost walls (2/h^2 each)
    assert np.allclose(d, 6 / g.h**2)


def test_pack_unpack_round_trip():
    g = grid_from_mask(build_cell_mask(CellGeometry.disc(0.25), 8), periodic=True)
    v = np.arange(g.n_cells, dtype=float)
    assert np.array_equal(g.pack(g.unpack(v)), v)
    f = np.arange(g.n_faces, dtype=float)
    assert np.array_equal(g.pack_faces(*g.unpack_faces(f)), f)


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0.05, 0.45), n=st.integers(4, 16), periodic=st.booleans())
def test_operator_identities(r, n, periodic):
    g = grid_from_mask(build_cell_mask(CellGeometry.disc(r), n), periodic=periodic)
    G = g.G.to_scipy()
    assert (g.B.to_scipy() != G.T).nnz == 0
    # column sums of L vanish: the discrete divergence theorem
    assert np.abs(np.asarray(g.L.to_scipy().sum(axis=0))).max() < 1e-9 / g.h**2
    assert g.A.max_asymmetry() == 0.0
    avg = g.face_average @ np.ones(g.n_cells)
    assert np.array_equal(avg, np.ones(g.n_faces))
