"""Upscaled model on the macro domain ``Omega = (0, 1)^2``.

The two-scale system is closed with ``w = dc/dt * sigma(y)`` and the
gradient corrector ``c1 = sum_j dc/dx_j chi^j``, which leaves one scalar
evolution for ``c``::

    AsWritten:     sigma_bar dc/dt = -div(D grad c) + f(c)
    GradientFlow:  sigma_bar dc/dt = +div(D grad c) - f(c)

The first is the literal orientation of the averaged chemical potential
equation and is backward-parabolic; it runs behind a growth guard.  A
Darcy flux is reconstructed from the cell flows after every step.  All
outer boundaries are no-flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cell import EffectiveCoefficients
from .discretize import Grid, full_grid
from .initial import make_initial
from .linalg import (
    SolveError,
    SolveReport,
    SparseMatrix,
    assemble,
    cg_solve,
    minres_solve,
    project_mean_zero,
)
from .micro import double_well, steps_for

__all__ = [
    "ORIENTATIONS",
    "MACRO_COLUMNS",
    "MacroError",
    "MacroParams",
    "MacroState",
    "MacroOperators",
    "tensor_operator",
    "darcy_solve",
    "macro_ch_step",
    "step_residual",
    "run_macro",
]

ORIENTATIONS = ("GradientFlow", "AsWritten")
MACRO_COLUMNS = ("step", "t", "E", "mass", "c_max", "c_L2", "w_L2", "u_L2", "div_max", "step_residual")


class MacroError(RuntimeError):
    pass


@dataclass(frozen=True)
class MacroParams:
    coefficients: EffectiveCoefficients
    N: int = 32
    lam: float = 1.0
    mu: float = 1.0
    dt: float = 1e-3
    T: float = 0.0
    S: float = 2.0
    orientation: str = "GradientFlow"
    sigma_bar_override: float | None = None
    conserve_mass: bool = True
    tol: float = 1e-12
    growth_limit: float = 10.0
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}; expected one of {ORIENTATIONS}")
        for name in ("lam", "mu", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.T < 0.0 or self.S < 0.0 or self.N < 2:
            raise ValueError("need T >= 0, S >= 0 and N >= 2")

    @property
    def sigma_bar(self) -> float:
        if self.sigma_bar_override is not None:
            return float(self.sigma_bar_override)
        return float(self.coefficients.sigma_bar)


@dataclass
class MacroState:
    t: float
    step: int
    c: np.ndarray  # (N, N)
    w: np.ndarray  # averaged chemical potential sigma_bar dc/dt
    p: np.ndarray
    ux: np.ndarray
    uy: np.ndarray


def _cross_average(grid: Grid) -> SparseMatrix:
    """4-point average of y-face values onto x-faces (missing faces count 0)."""
    nx, ny = grid.shape
    rows, cols = [], []
    i, j = np.nonzero(grid.face_x_active)
    me = grid.fx_id[i, j]
    for di, dj in ((0, 0), (1, 0), (0, -1), (1, -1)):
        ii, jj = i + di, j + dj
        inside = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        nb = np.full(me.shape, -1)
        nb[inside] = grid.fy_id[ii[inside], jj[inside]]
        ok = nb >= 0
        rows.append(me[ok])
        cols.append(nb[ok] - grid.n_fx)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return assemble((r, c, np.full(r.size, 0.25)), grid.n_fx, grid.n_fy)


def tensor_operator(grid: Grid, T: np.ndarray) -> SparseMatrix:
    """Face operator applying a constant symmetric 2x2 tensor to face gradients."""
    T = 0.5 * (np.asarray(T, dtype=float) + np.asarray(T, dtype=float).T)
    P = _cross_average(grid).to_scipy()
    blk = sp.bmat(
        [[T[0, 0] * sp.identity(grid.n_fx), T[0, 1] * P],
         [T[1, 0] * P.T, T[1, 1] * sp.identity(grid.n_fy)]],
        format="csr",
    )
    return SparseMatrix(blk)


class MacroOperators:
    def __init__(self, params: MacroParams):
        co = params.coefficients
        self.grid = full_grid(params.N, periodic=False)
        g = self.grid
        G = g.G.to_scipy()
        Dop = tensor_operator(g, co.D_eff).to_scipy()
        LD = (G.T @ Dop @ G).tocsr()
        LD = 0.5 * (LD + LD.T)
        self.LD = SparseMatrix(LD, symmetric=True)
        self.K = None
        if co.K is not None:
            Kop = tensor_operator(g, co.K).to_scipy()
            self.Kface = Kop
            KL = (G.T @ Kop @ G).tocsr() * (1.0 / params.mu)
            self.K = SparseMatrix(0.5 * (KL + KL.T), symmetric=True)
        self.params = params


def darcy_solve(c: np.ndarray, dcdt: np.ndarray, params: MacroParams, ops: MacroOperators | None = None):
    """Return ``(ux, uy, p, div_max)``.

    ``u = -(1/mu) K grad p - (lam / 2 mu) M d(c^2)/dt`` with
    ``d(c^2)/dt = 2 c dc/dt`` averaged to faces; ``p`` is the mean-zero
    solution of the no-flux problem making ``u`` divergence free.
    """
    if ops is None:
        ops = MacroOperators(params)
    if ops.K is None:
        raise MacroError("permeability not defined for this geometry; Darcy law unavailable")
    g = ops.grid
    M = np.asarray(params.coefficients.M, dtype=float)
    s = 2.0 * g.pack(c) * g.pack(dcdt)
    drive = (params.lam / (2.0 * params.mu)) * (g.face_average @ s) * M[g.face_direction]
    zero = np.zeros(g.shape)
    if not np.any(drive):
        return zero, zero.copy(), zero.copy(), 0.0
    rhs = -(g.B @ drive)
    p, rep = cg_solve(ops.K, rhs, tol=params.tol, mean_zero=True, max_iter=50_000)
    if not rep.converged:
        raise SolveError("Darcy pressure solve did not converge", rep)
    p = project_mean_zero(p)
    u = -(ops.Kface @ (g.G @ p)) / params.mu - drive
    div = g.div(u)
    ux, uy = g.unpack_faces(u)
    return ux, uy, g.unpack(p), float(np.abs(div).max())


def _system(params: MacroParams, ops: MacroOperators):
    """Matrix and sign of the stepped equation for ``delta = c' - c``."""
    sb, dt, S = params.sigma_bar, params.dt, params.S
    n = ops.grid.n_cells
    I = sp.identity(n, format="csr")
    LD = ops.LD.to_scipy()
    if params.orientation == "GradientFlow":
        return ((sb / dt + S) * I + LD).tocsr()
    return ((sb / dt - S) * I - LD).tocsr()


def _nonlinear(c: np.ndarray, params: MacroParams) -> np.ndarray:
    _, fc = double_well(c)
    if params.conserve_mass:
        fc = fc - fc.mean()
    return fc


def macro_ch_step(c: np.ndarray, params: MacroParams, ops: MacroOperators | None = None, matrix=None):
    """One step; returns ``(c_next, w_next, report)`` on the full grid."""
    if ops is None:
        ops = MacroOperators(params)
    sb = params.sigma_bar
    if params.orientation == "AsWritten" and sb == 0.0:
        raise MacroError("macro equation degenerate; supply sigma_bar_override")
    g = ops.grid
    cv = g.pack(c)
    fc = _nonlinear(cv, params)
    LDc = ops.LD @ cv
    if params.orientation == "GradientFlow":
        rhs = -LDc - fc
    else:
        rhs = LDc + fc
    A = matrix if matrix is not None else _system(params, ops)
    if not np.any(rhs):
        delta, rep = np.zeros_like(cv), SolveReport(0, 0.0, True, 0.0)
    elif params.orientation == "GradientFlow" and sb / params.dt + params.S > 0.0:
        delta, rep = cg_solve(A, rhs, tol=params.tol, max_iter=50_000)
    else:
        delta, rep = minres_solve(A, rhs, tol=params.tol, max_iter=50_000)
    if not rep.converged:
        raise SolveError("macro step solve did not converge", rep)
    c_next = cv + delta
    w_next = sb * delta / params.dt
    return g.unpack(c_next), g.unpack(w_next), rep


def step_residual(c: np.ndarray, c_next: np.ndarray, params: MacroParams, ops: MacroOperators) -> float:
    """Relative residual of the stepped equation re-evaluated at ``(c, c_next)``."""
    g = ops.grid
    cv, cn = g.pack(c), g.pack(c_next)
    fc = _nonlinear(cv, params)
    lhs = params.sigma_bar * (cn - cv) / params.dt
    if params.orientation == "GradientFlow":
        rhs = -(ops.LD @ cn) - fc - params.S * (cn - cv)
    else:
        rhs = (ops.LD @ cn) + fc + params.S * (cn - cv)
    scale = float(np.linalg.norm(-(ops.LD @ cv) - fc)) + 1e-300
    return float(np.linalg.norm(lhs - rhs)) / scale


@dataclass
class MacroRun:
    params: MacroParams
    snapshots: list[MacroState]
    ledger: list[dict] = field(default_factory=list)
    final: MacroState | None = None


def _energy(c: np.ndarray, params: MacroParams, ops: MacroOperators) -> float:
    g = ops.grid
    cv = g.pack(c)
    F, _ = double_well(cv)
    h2 = g.h**2
    return params.lam * (0.5 * float(cv @ (ops.LD @ cv)) + float(F.sum())) * h2


def run_macro(params: MacroParams, c0: str | np.ndarray = "stripe", seed: int = 0) -> MacroRun:
    ops = MacroOperators(params)
    g = ops.grid
    n_steps = steps_for(params.T, params.dt)
    c = make_initial(c0, params.N, seed) if isinstance(c0, str) else np.array(c0, dtype=float)
    if params.orientation == "AsWritten" and params.sigma_bar == 0.0:
        raise MacroError("macro equation degenerate; supply sigma_bar_override")
    need_darcy = ops.K is not None
    zero = np.zeros(g.shape)
    st = MacroState(0.0, 0, c, zero.copy(), zero.copy(), zero.copy(), zero.copy())
    h2 = g.h**2
    run = MacroRun(params, [st])

    def row(st, div_max, res):
        return {
            "step": st.step,
            "t": st.t,
            "E": _energy(st.c, params, ops),
            "mass": float(st.c.sum()) * h2,
            "c_max": float(np.abs(st.c).max()),
            "c_L2": float(np.sqrt((st.c**2).sum() * h2)),
            "w_L2": float(np.sqrt((st.w**2).sum() * h2)),
            "u_L2": float(np.sqrt(((st.ux**2).sum() + (st.uy**2).sum()) * h2)),
            "div_max": div_max,
            "step_residual": res,
        }

    run.ledger.append(row(st, 0.0, 0.0))
    A = _system(params, ops)
    for n in range(1, n_steps + 1):
        c_next, w_next, _ = macro_ch_step(st.c, params, ops, matrix=A)
        res = step_residual(st.c, c_next, params, ops)
        dcdt = (c_next - st.c) / params.dt
        if need_darcy:
            ux, uy, p, div_max = darcy_solve(c_next, dcdt, params, ops)
        else:
            ux, uy, p, div_max = zero.copy(), zero.copy(), zero.copy(), 0.0
        st = MacroState(n * params.dt, n, c_next, w_next, p, ux, uy)
        run.ledger.append(row(st, div_max, res))
        if n % params.snapshot_stride == 0 or n == n_steps:
            run.snapshots.append(st)
        if params.orientation == "AsWritten" and np.abs(c_next).max() > params.growth_limit:
            raise MacroError(
                f"step {n}: growth guard tripped (|c|_inf = {np.abs(c_next).max():.3g} > {params.growth_limit})"
            )
    run.final = st
    return run
