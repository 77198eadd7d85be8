"""Pore-scale Stokes / Cahn-Hilliard time stepping on a perforated domain.

Scaled system on the pore space (defaults ``alpha=2, beta=1, gamma=0``)::

    -mu eps^2 Lap u + grad p = -eps lam c grad w,    div u = 0
    dc/dt + eps^beta div(u c) = eps^alpha Lap w
    w = -eps^gamma Lap c + f(c)

with no-slip for ``u`` and no-flux for ``c`` and ``w`` on the solid walls
and on the outer boundary.  One time step solves the Cahn-Hilliard part with
the velocity of the current state, then refreshes ``(u, p)`` from the new
``(c, w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .discretize import Grid, grid_from_mask
from .geometry import CellGeometry, DomainMask, build_domain_mask
from .initial import make_initial
from .linalg import (
    SolveError,
    SolveReport,
    cg_solve,
    minres_solve,
    project_mean_zero,
    saddle_minres,
    uzawa_solve,
)

__all__ = [
    "MONITORS",
    "LEDGER_COLUMNS",
    "MicroParams",
    "MicroState",
    "EnergyLedger",
    "MicroRun",
    "StepError",
    "double_well",
    "stokes_solve",
    "ch_step",
    "run_micro",
    "estimate_report",
    "steps_for",
]

MONITORS = (
    "grad_u_L2L2",
    "grad_w_L2L2",
    "grad_c_LinfL2",
    "c_LinfL4",
    "w_L2L2",
    "dtc_L2H1star",
)
LEDGER_COLUMNS = ("step", "t", "E", "D_u", "D_w", "mass") + MONITORS


class StepError(RuntimeError):
    """A linear solve failed inside a time step."""

    def __init__(self, message: str, step: int, report: SolveReport | None = None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.report = report


@dataclass(frozen=True)
class MicroParams:
    eps: float
    lam: float = 1.0
    mu: float = 1.0
    dt: float = 1e-3
    T: float = 0.0
    S: float = 2.0
    alpha: int = 2
    beta: int = 1
    gamma: int = 0
    exponent_override: bool = False
    flow: bool = True
    stokes_solver: str = "minres"
    stokes_tol: float = 1e-9
    uzawa_step: float | None = None
    ch_solver: str = "cg"
    ch_tol: float = 1e-10
    snapshot_stride: int = 1
    dual_stride: int = 1

    def __post_init__(self):
        for name in ("eps", "lam", "mu", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.T < 0.0 or self.S < 0.0:
            raise ValueError("T and S must be nonnegative")
        if (self.alpha, self.beta, self.gamma) != (2, 1, 0) and not self.exponent_override:
            raise ValueError("exponents are fixed to alpha=2, beta=1, gamma=0 unless exponent_override is set")
        if self.stokes_solver not in ("minres", "uzawa", "richardson"):
            raise ValueError(f"unknown stokes_solver {self.stokes_solver!r}")
        if self.ch_solver not in ("cg", "minres"):
            raise ValueError(f"unknown ch_solver {self.ch_solver!r}")
        if self.snapshot_stride < 1 or self.dual_stride < 1:
            raise ValueError("strides must be >= 1")


def steps_for(T: float, dt: float) -> int:
    """Number of steps with ``steps * dt == T`` (to rounding)."""
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(dt, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return int(n)


def double_well(s):
    """``F(s) = (s^2 - 1)^2 / 4`` and ``f(s) = F'(s) = s^3 - s``."""
    s = np.asarray(s, dtype=float)
    return 0.25 * (s * s - 1.0) ** 2, s * s * s - s


@dataclass
class MicroState:
    """Packed state: ``c, w, p`` on active cells, ``u`` on active faces."""

    t: float
    step: int
    c: np.ndarray
    w: np.ndarray
    u: np.ndarray
    p: np.ndarray

    def copy(self) -> MicroState:
        return MicroState(self.t, self.step, self.c.copy(), self.w.copy(), self.u.copy(), self.p.copy())


@dataclass
class EnergyLedger:
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


@dataclass
class MicroRun:
    grid: Grid
    mask: DomainMask
    params: MicroParams
    snapshots: list[MicroState]
    ledger: EnergyLedger
    final: MicroState
    dcdt: np.ndarray  # (c^N - c^{N-1}) / dt of the last step, zeros if no step
    reports: list[SolveReport]

    def field(self, state: MicroState, name: str) -> np.ndarray:
        if name == "u":
            return self.grid.unpack_faces(state.u)
        return self.grid.unpack(getattr(state, name))


# ---------------------------------------------------------------------------
# substeps


class _Operators:
    """Matrices shared by every step of a run."""

    def __init__(self, grid: Grid, params: MicroParams):
        self.grid = grid
        self.params = params
        p = params
        self.visc = grid.A * (p.mu * p.eps**2)
        self.L = grid.L
        self.w_scale = p.eps**p.gamma
        self.mob = p.eps**p.alpha
        self.adv = p.eps**p.beta
        L = self.L.to_scipy()
        I = sp.identity(grid.n_cells, format="csr")
        self.ch_matrix = (I + (p.dt * self.mob) * (L @ (self.w_scale * L + p.S * I))).tocsr()
        self.h1 = (I + L).tocsr()
        if p.ch_solver == "minres":
            self.ch_block = sp.bmat(
                [[(p.dt * self.mob) * L, I], [I, -(self.w_scale * L + p.S * I)]], format="csr"
            )


def stokes_solve(grid: Grid, c: np.ndarray, w: np.ndarray, params: MicroParams,
                 visc=None, u0=None, p0=None):
    """MAC Stokes solve with forcing ``-eps lam c grad w`` on active faces.

    ``c`` is averaged onto the face, ``grad w`` is the face-normal
    difference.  Returns ``(u, p, report)``; ``p`` has zero mean.
    """
    f = -(params.eps * params.lam) * (grid.face_average @ c) * (grid.G @ w)
    if visc is None:
        visc = grid.A * (params.mu * params.eps**2)
    if not np.any(f):
        return np.zeros(grid.n_faces), np.zeros(grid.n_cells), SolveReport(0, 0.0, True, 0.0)
    if params.stokes_solver == "minres":
        u, p, rep = saddle_minres(visc, grid.B, f, tol=params.stokes_tol, u0=u0, p0=p0)
    else:
        method = "cg" if params.stokes_solver == "uzawa" else "richardson"
        step = params.uzawa_step if params.uzawa_step is not None else params.mu * params.eps**2
        u, p, rep = uzawa_solve(visc, grid.B, f, tol=params.stokes_tol, method=method,
                                step=step, u0=u0, p0=p0)
    return u, p, rep


def advective_divergence(grid: Grid, u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``div(u c)`` with first-order upwind face values (conservative)."""
    lo, hi = grid.face_cells
    c_up = np.where(u > 0.0, c[lo], c[hi])
    return grid.div(u * c_up)


def ch_step(grid: Grid, state: MicroState, params: MicroParams, ops: _Operators | None = None):
    """One linearly stabilized step; returns ``(c_next, w_next, report)``.

    ``(c' - c)/dt + eps^beta div(u c_up) = eps^alpha Lap w'`` and
    ``w' = -eps^gamma Lap c' + f(c) + S (c' - c)``.  With ``ch_solver="cg"``
    ``w'`` is eliminated and the SPD system for ``c'`` is solved by CG;
    ``"minres"`` solves the coupled symmetric system for ``(w', c')``.
    Either way ``c'`` is finally rebuilt from ``w'`` in flux form so the
    total mass changes only by rounding.
    """
    if ops is None:
        ops = _Operators(grid, params)
    p = params
    c = state.c
    _, fc = double_well(c)
    adv = advective_divergence(grid, state.u, c) if np.any(state.u) else np.zeros_like(c)
    explicit = c - (p.dt * ops.adv) * adv
    g = fc - p.S * c
    if p.ch_solver == "cg":
        rhs = explicit - (p.dt * ops.mob) * (ops.L @ g)
        c_new, rep = cg_solve(ops.ch_matrix, rhs, tol=p.ch_tol, x0=c)
    else:
        rhs = np.concatenate([explicit, g])
        x0 = np.concatenate([state.w, c])
        x, rep = minres_solve(ops.ch_block, rhs, tol=p.ch_tol, x0=x0)
        c_new = x[grid.n_cells:]
    if not rep.converged:
        raise StepError("Cahn-Hilliard solve did not converge", state.step + 1, rep)
    w_new = ops.w_scale * (ops.L @ c_new) + p.S * c_new + g
    c_new = explicit - (p.dt * ops.mob) * (ops.L @ w_new)
    return c_new, w_new, rep


# ---------------------------------------------------------------------------
# diagnostics


def _h1_dual_sq(ops: _Operators, d: np.ndarray, tol: float) -> float:
    if not np.any(d):
        return 0.0
    z, rep = cg_solve(ops.h1, d, tol=tol)
    return float(np.dot(d, z)) * ops.grid.h**2


def _energy_terms(ops: _Operators, st: MicroState) -> dict:
    g, p = ops.grid, ops.params
    h2 = g.h**2
    Fc, _ = double_well(st.c)
    gc = g.G @ st.c
    gw = g.G @ st.w
    grad_c_sq = float(np.dot(gc, gc)) * h2
    grad_w_sq = float(np.dot(gw, gw)) * h2
    grad_u_sq = float(np.dot(st.u, g.A @ st.u)) * h2 if np.any(st.u) else 0.0
    return {
        "E": 0.5 * p.lam * ops.w_scale * grad_c_sq + p.lam * float(Fc.sum()) * h2,
        "D_u": p.mu * p.eps**2 * grad_u_sq,
        "D_w": p.lam * ops.mob * grad_w_sq,
        "mass": float(st.c.sum()) * h2,
        "_grad_c": math.sqrt(grad_c_sq),
        "_grad_u_sq": grad_u_sq,
        "_grad_w_sq": grad_w_sq,
        "_c4": float((st.c**4).sum() * h2) ** 0.25,
        "_w_sq": float(np.dot(st.w, st.w)) * h2,
    }


class _MonitorAccumulator:
    def __init__(self, params: MicroParams):
        self.p = params
        self.sum_u = self.sum_w = self.sum_wl2 = self.sum_dual = 0.0
        self.sup_gc = self.sup_c4 = 0.0

    def row(self, step: int, t: float, terms: dict, dual_sq: float | None) -> dict:
        p = self.p
        if step > 0:
            self.sum_u += p.dt * terms["_grad_u_sq"]
            self.sum_w += p.dt * terms["_grad_w_sq"]
            self.sum_wl2 += p.dt * terms["_w_sq"]
            if dual_sq is not None:
                self.sum_dual += p.dt * p.dual_stride * dual_sq
        self.sup_gc = max(self.sup_gc, terms["_grad_c"])
        self.sup_c4 = max(self.sup_c4, terms["_c4"])
        row = {"step": step, "t": t}
        row.update({k: v for k, v in terms.items() if not k.startswith("_")})
        row.update({
            "grad_u_L2L2": math.sqrt(p.mu) * p.eps * math.sqrt(self.sum_u),
            "grad_w_L2L2": math.sqrt(p.lam) * p.eps * math.sqrt(self.sum_w),
            "grad_c_LinfL2": self.sup_gc,
            "c_LinfL4": self.sup_c4,
            "w_L2L2": math.sqrt(self.sum_wl2),
            "dtc_L2H1star": math.sqrt(self.sum_dual),
        })
        return row


def estimate_report(ledger: EnergyLedger) -> dict:
    """Time suprema of the monitored norms."""
    if not ledger.rows:
        raise ValueError("empty ledger")
    return {m: float(max(r[m] for r in ledger.rows)) for m in MONITORS}


# ---------------------------------------------------------------------------
# driver


def initial_state(grid: Grid, c0_full: np.ndarray, params: MicroParams, ops: _Operators) -> MicroState:
    c = grid.pack(c0_full)
    if np.any(np.abs(c) > 1.0):
        raise ValueError("initial order parameter must lie in [-1, 1]")
    _, fc = double_well(c)
    w = ops.w_scale * (ops.L @ c) + fc
    st = MicroState(0.0, 0, c, w, np.zeros(grid.n_faces), np.zeros(grid.n_cells))
    return st


def run_micro(
    geom: CellGeometry | DomainMask,
    eps: float | None = None,
    N_cell: int | None = None,
    params: MicroParams | None = None,
    c0: str | np.ndarray = "random",
    seed: int = 0,
) -> MicroRun:
    """March the pore-scale system from ``c0`` to ``params.T``.

    ``geom`` is either a cell geometry (then ``eps`` and ``N_cell`` build the
    domain mask) or a ready :class:`DomainMask`.  ``c0`` is an initializer
    string (see :mod:`porehomog.initial`) or a full-grid array.
    """
    if isinstance(geom, DomainMask):
        mask = geom
    else:
        mask = build_domain_mask(geom, eps, N_cell)
    if params is None:
        params = MicroParams(eps=mask.eps)
    if abs(params.eps - mask.eps) > 1e-14:
        params = replace(params, eps=mask.eps)
    grid = grid_from_mask(mask, periodic=False)
    ops = _Operators(grid, params)
    n_steps = steps_for(params.T, params.dt)

    c0_full = make_initial(c0, mask.N, seed) if isinstance(c0, str) else np.asarray(c0, float)
    st = initial_state(grid, c0_full, params, ops)
    reports: list[SolveReport] = []
    if params.flow:
        st.u, st.p, rep = _stokes(grid, st, params, ops, 0)
        reports.append(rep)

    acc = _MonitorAccumulator(params)
    ledger = EnergyLedger()
    ledger.rows.append(acc.row(0, 0.0, _energy_terms(ops, st), None))
    snapshots = [st.copy()]
    dcdt = np.zeros(grid.n_cells)
    for n in range(1, n_steps + 1):
        c_new, w_new, rep = ch_step(grid, st, params, ops)
        reports.append(rep)
        dcdt = (c_new - st.c) / params.dt
        st = MicroState(n * params.dt, n, c_new, w_new, st.u, st.p)
        if params.flow:
            st.u, st.p, rep = _stokes(grid, st, params, ops, n)
            reports.append(rep)
        dual = None
        if n % params.dual_stride == 0:
            dual = _h1_dual_sq(ops, dcdt, 1e-12)
        ledger.rows.append(acc.row(n, st.t, _energy_terms(ops, st), dual))
        if n % params.snapshot_stride == 0 or n == n_steps:
            snapshots.append(st.copy())
    return MicroRun(grid, mask, params, snapshots, ledger, st, dcdt, reports)


def _stokes(grid, st, params, ops, step):
    u0 = st.u if np.any(st.u) else None
    p0 = st.p if np.any(st.p) else None
    u, p, rep = stokes_solve(grid, st.c, st.w, params, visc=ops.visc, u0=u0, p0=p0)
    if not rep.converged:
        raise StepError("Stokes solve did not converge", step, rep)
    return u, project_mean_zero(p), rep
