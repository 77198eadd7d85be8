import numpy as np
import pytest

from porehomog.cell import EffectiveCoefficients, effective_coefficients
from porehomog.geometry import CellGeometry
from porehomog.initial import make_initial
from porehomog.macro import (
    MacroError,
    MacroOperators,
    MacroParams,
    darcy_solve,
    macro_ch_step,
    run_macro,
    step_residual,
)


def _coeffs(D=np.eye(2), K=0.01 * np.eye(2), M=(0.0, 0.0), sigma_bar=1.0):
    return EffectiveCoefficients(theta=1.0, sigma_bar=sigma_bar, D_eff=np.asarray(D, float),
                                 K=None if K is None else np.asarray(K, float), M=np.asarray(M, float),
                                 convention="FluxBalance", N=0, geometry="test")


@pytest.fixture(scope="module")
def disc_coeffs():
    return effective_coefficients(CellGeometry.disc(0.25), 32)


def _x1(N):
    x = (np.arange(N) + 0.5) / N
    return np.meshgrid(x, x, indexing="ij")


def test_darcy_zero_drive():
    prm = MacroParams(_coeffs(M=(0.3, -0.1)), N=8)
    c = make_initial("random", 8, 1)
    ux, uy, p, div = darcy_solve(c, np.zeros((8, 8)), prm)
    assert not ux.any() and not uy.any() and not p.any() and div == 0.0
    prm = MacroParams(_coeffs(M=(0.0, 0.0)), N=8)
    ux, uy, p, _ = darcy_solve(c, np.ones((8, 8)), prm)
    assert not ux.any() and not uy.any()


def test_darcy_undefined_permeability():
    with pytest.raises(MacroError):
        darcy_solve(np.zeros((4, 4)), np.ones((4, 4)), MacroParams(_coeffs(K=None), N=4))


def test_darcy_matches_dense_solve(disc_coeffs):
    co = _coeffs(D=disc_coeffs.D_eff, K=disc_coeffs.K, M=(0.3, -0.1))
    prm = MacroParams(co, N=16, tol=1e-13)
    ops = MacroOperators(prm)
    X1, X2 = _x1(16)
    c = np.cos(np.pi * X2)
    dcdt = np.sin(2 * np.pi * X1)
    ux, uy, p, div = darcy_solve(c, dcdt, prm, ops)
    assert div <= 1e-8
    # dense oracle: bordered system for the mean-zero pressure
    g = ops.grid
    Kmat = ops.K.toarray()
    M = np.array([0.3, -0.1])
    drive = 0.5 * (g.face_average @ (2 * g.pack(c) * g.pack(dcdt))) * M[g.face_direction]
    rhs = -(g.B.toarray() @ drive)
    n = g.n_cells
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = Kmat
    A[:n, n] = A[n, :n] = 1.0
    p_ref = np.linalg.solve(A, np.concatenate([rhs, [0.0]]))[:n]
    assert np.abs(g.pack(p) - p_ref).max() < 1e-8
    assert np.abs(p).max() > 1e-4


def test_darcy_with_real_cell_coefficients_is_quiet(disc_coeffs):
    prm = MacroParams(disc_coeffs, N=16)
    X1, X2 = _x1(16)
    ux, uy, p, div = darcy_solve(np.cos(np.pi * X2), np.sin(2 * np.pi * X1), prm)
    # the flux-balance surface-tension drive of a symmetric disc vanishes
    assert max(np.abs(ux).max(), np.abs(uy).max()) < 1e-12 and div < 1e-12


@pytest.mark.parametrize("orientation", ["GradientFlow", "AsWritten"])
@pytest.mark.parametrize("value", [1.0, 0.0])
def test_macro_step_fixed_points(orientation, value):
    prm = MacroParams(_coeffs(), N=8, orientation=orientation)
    c_next, w_next, _ = macro_ch_step(np.full((8, 8), value), prm)
    assert np.array_equal(c_next, np.full((8, 8), value)) and not w_next.any()


def test_as_written_degenerate_sigma():
    prm = MacroParams(_coeffs(sigma_bar=0.0), N=8, orientation="AsWritten")
    with pytest.raises(MacroError, match="degenerate; supply sigma_bar_override"):
        macro_ch_step(np.zeros((8, 8)), prm)
    prm = MacroParams(_coeffs(sigma_bar=0.0), N=8, orientation="AsWritten", sigma_bar_override=1.0)
    assert prm.sigma_bar == 1.0
    macro_ch_step(np.zeros((8, 8)), prm)


def test_gradient_flow_mass_and_residual():
    prm = MacroParams(_coeffs(), N=32, dt=1e-3, T=0.05, S=2.0)
    run = run_macro(prm, "random", 0)
    mass = np.array([r["mass"] for r in run.ledger])
    assert np.abs(mass - mass[0]).max() <= 1e-10
    assert max(r["step_residual"] for r in run.ledger) <= 1e-9


def test_unprojected_reaction_changes_mass_but_residual_holds():
    prm = MacroParams(_coeffs(), N=16, T=0.01, conserve_mass=False)
    run = run_macro(prm, "random", 3)
    mass = np.array([r["mass"] for r in run.ledger])
    assert np.abs(mass - mass[0]).max() > 1e-6
    assert max(r["step_residual"] for r in run.ledger) <= 1e-9


def test_step_residual_recomputation():
    prm = MacroParams(_coeffs(D=[[0.8, 0.1], [0.1, 0.6]]), N=16, tol=1e-13)
    ops = MacroOperators(prm)
    c = make_initial("smooth", 16, 2)
    c_next, _, _ = macro_ch_step(c, prm, ops)
    assert step_residual(c, c_next, prm, ops) <= 1e-11
    assert step_residual(c, c, prm, ops) > 1e-3


def test_constant_initial_stationary():
    prm = MacroParams(_coeffs(M=(0.3, 0.2)), N=8, T=0.01)
    run = run_macro(prm, "constant:1", 0)
    for s in run.snapshots:
        assert np.all(s.c == 1.0) and not s.ux.any() and not s.uy.any()


def test_stripe_stays_bounded(disc_coeffs):
    co = _coeffs(D=disc_coeffs.D_eff, K=disc_coeffs.K, M=(0.3, -0.1))
    prm = MacroParams(co, N=32, T=0.1, sigma_bar_override=1.0)
    run = run_macro(prm, "stripe", 0)
    c0max = np.abs(run.snapshots[0].c).max()
    assert max(r["c_max"] for r in run.ledger) <= max(c0max, 1.0) + 0.1
    assert max(r["div_max"] for r in run.ledger) <= 1e-8


def test_as_written_growth_guard():
    prm = MacroParams(_coeffs(), N=32, T=0.1, orientation="AsWritten")
    with pytest.raises(MacroError, match="growth guard"):
        run_macro(prm, "stripe", 0)


def test_macro_deterministic():
    prm = MacroParams(_coeffs(M=(0.2, 0.1)), N=16, T=0.01)
    a = run_macro(prm, "random", 9)
    b = run_macro(prm, "random", 9)
    assert a.ledger == b.ledger
    assert np.array_equal(a.final.c, b.final.c) and np.array_equal(a.final.ux, b.final.ux)


def test_params_validation():
    with pytest.raises(ValueError):
        MacroParams(_coeffs(), orientation="Backwards")
    with pytest.raises(ValueError):
        MacroParams(_coeffs(), dt=0.0)
