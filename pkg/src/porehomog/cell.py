"""Unit-cell problems and the effective coefficients built from them.

All cell problems are posed on the pore part of ``Y = (0, 1)^2`` with
periodic outer faces:

* ``sigma``:   ``Lap sigma = 1`` with a solvability convention on the walls,
* ``chi^j``:   ``Lap chi^j = 0`` with ``d chi^j / dn = -n_j`` on the walls,
* ``omega^F``: unit-viscosity Stokes flow driven by ``F`` with no-slip walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretize import Grid, grid_from_mask
from .geometry import CellGeometry, CellMask, build_cell_mask, porosity
from .linalg import SolveError, SolveReport, cg_solve, project_mean_zero, saddle_minres

__all__ = [
    "CONVENTIONS",
    "CellProblemError",
    "SigmaSolution",
    "EffectiveCoefficients",
    "solve_sigma",
    "solve_correctors",
    "solve_stokes_cell",
    "permeability",
    "effective_coefficients",
    "richardson_rate",
]

CONVENTIONS = ("FluxBalance", "MeanProject")


class CellProblemError(ValueError):
    pass


@dataclass
class SigmaSolution:
    sigma: np.ndarray  # full N x N, zero on solid cells
    sigma_bar: float
    convention: str
    prescribed_flux: float | None  # |Y_p| / |Gamma_s| from the exact geometry
    discrete_flux: float | None  # the same ratio measured on the staircase
    compatibility_residual: float
    report: SolveReport


@dataclass
class EffectiveCoefficients:
    theta: float
    sigma_bar: float
    D_eff: np.ndarray
    K: np.ndarray | None
    M: np.ndarray
    convention: str
    N: int
    geometry: str
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "theta": self.theta,
            "sigma_bar": self.sigma_bar,
            "D_eff": self.D_eff.tolist(),
            "K": self.K.tolist() if self.K is not None else "not defined",
            "M": self.M.tolist(),
            "convention": self.convention,
            "N": self.N,
            "geometry": self.geometry,
            "residuals": self.residuals,
        }

    @classmethod
    def from_json(cls, doc: dict) -> EffectiveCoefficients:
        K = doc["K"]
        return cls(
            theta=float(doc["theta"]),
            sigma_bar=float(doc["sigma_bar"]),
            D_eff=np.array(doc["D_eff"], dtype=float),
            K=None if isinstance(K, str) else np.array(K, dtype=float),
            M=np.array(doc["M"], dtype=float),
            convention=doc.get("convention", "FluxBalance"),
            N=int(doc.get("N", 0)),
            geometry=doc.get("geometry", ""),
            residuals=dict(doc.get("residuals", {})),
        )


def _cell_grid(mask: CellMask) -> Grid:
    return grid_from_mask(mask, periodic=True)


def _wall_faces(grid: Grid, geom: CellGeometry):
    """Faces between an active and an inactive cell.

    Returns the packed id of the active cell, the weight ``|n . e_f|`` of
    the exact solid normal at the face centre, and the face direction.
    """
    act = grid.cell_active
    nx, ny = grid.shape
    h = grid.h
    cells, weights = [], []
    for axis in (0, 1):
        for step in (-1, 1):
            nb = np.roll(act, -step, axis=axis)
            i, j = np.nonzero(act & ~nb)
            if axis == 0:
                fx, fy = (i + 0.5 + 0.5 * step) * h, (j + 0.5) * h
            else:
                fx, fy = (i + 0.5) * h, (j + 0.5 + 0.5 * step) * h
            n1, n2 = geom.solid_normal(fx, fy)
            weights.append(np.abs(n1 if axis == 0 else n2))
            cells.append(grid.cell_id[i, j])
    return np.concatenate(cells), np.concatenate(weights)


def solve_sigma(mask: CellMask, convention: str = "FluxBalance", tol: float = 1e-12) -> SigmaSolution:
    """``Lap sigma = 1`` in the pore, periodic, mean zero.

    FluxBalance puts a wall flux ``d sigma / dn = g |n . e_f|`` on every
    wall face, with ``g`` chosen so the total wall flux equals the discrete
    pore area exactly.  MeanProject uses homogeneous Neumann data and
    projects the source to zero mean, which makes ``sigma`` vanish.
    """
    if convention not in CONVENTIONS:
        raise CellProblemError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    geom = mask.geometry
    grid = _cell_grid(mask)
    h = grid.h
    area_h = grid.n_cells * h * h
    prescribed = discrete = None
    if convention == "FluxBalance":
        if geom.interface_length == 0.0:
            raise CellProblemError(
                "FluxBalance needs a solid interface; use MeanProject for the empty cell"
            )
        prescribed = geom.pore_area / geom.interface_length
        cells, wts = _wall_faces(grid, geom)
        discrete = area_h / (float(wts.sum()) * h)
        wall = np.bincount(cells, weights=discrete * wts, minlength=grid.n_cells)
        # finite volume balance: (1/h)(sum of interior fluxes + wall flux) = 1
        rhs = wall / h - 1.0
        compat = abs(float(rhs.sum()) * h * h)
    else:
        rhs = project_mean_zero(np.full(grid.n_cells, -1.0))
        compat = abs(float(rhs.sum()) * h * h)
    sig, rep = cg_solve(grid.L, rhs, tol=tol, mean_zero=True, max_iter=50_000)
    if not rep.converged:
        raise SolveError("sigma cell problem did not converge", rep)
    sig = project_mean_zero(sig)
    if convention == "FluxBalance":
        # discrete divergence theorem with the computed field
        lap_sum = float((-(grid.L @ sig) + wall / h).sum()) * h * h
        compat = max(compat, abs(lap_sum - float(wall.sum()) * h))
    sigma_bar = float(sig.sum()) * h * h / area_h
    return SigmaSolution(grid.unpack(sig), sigma_bar, convention, prescribed, discrete, compat, rep)


def solve_correctors(mask: CellMask, tol: float = 1e-12):
    """Return ``(chi1, chi2, D_eff, reports)`` with full-grid correctors.

    ``D_ij = (1/|Y_p|) sum_{i-faces} (delta_ij + (G chi^j)_i) h^2``, which
    equals the energy form ``(1/|Y_p|) (e_i + G chi^i) . (e_j + G chi^j) h^2``;
    the identity part is counted on faces so a blocked direction gives 0.
    """
    grid = _cell_grid(mask)
    h2 = grid.h**2
    area_h = grid.n_cells * h2
    chis, reports = [], []
    Abar = np.zeros((2, 2))
    E = [(grid.face_direction == d).astype(float) for d in (0, 1)]
    for j in (0, 1):
        rhs = -(grid.B @ E[j])
        if not np.any(rhs):
            chi = np.zeros(grid.n_cells)
            rep = SolveReport(0, 0.0, True, 0.0)
        else:
            chi, rep = cg_solve(grid.L, rhs, tol=tol, mean_zero=True, max_iter=50_000)
            if not rep.converged:
                raise SolveError(f"corrector chi^{j + 1} did not converge", rep)
            chi = project_mean_zero(chi)
        g = grid.G @ chi
        for i in (0, 1):
            Abar[i, j] = float(np.dot(E[i], g)) * h2 / area_h
        chis.append(grid.unpack(chi))
        reports.append(rep)
    face_measure = np.diag([float(e.sum()) for e in E]) * h2 / area_h
    return chis[0], chis[1], face_measure + Abar, reports


def solve_stokes_cell(mask: CellMask, forcing, tol: float = 1e-11):
    """Periodic unit-viscosity Stokes flow in the pore.

    ``forcing`` is ``"e1"``, ``"e2"``, a full-grid ``sigma`` array (drives
    with ``-grad sigma``) or a packed face vector.  Returns
    ``(omega_x, omega_y, pi, report)`` as full-grid arrays.
    """
    grid = _cell_grid(mask)
    if isinstance(forcing, str):
        if forcing not in ("e1", "e2"):
            raise CellProblemError(f"unknown forcing {forcing!r}")
        f = (grid.face_direction == (0 if forcing == "e1" else 1)).astype(float)
    else:
        arr = np.asarray(forcing, dtype=float)
        if arr.shape == grid.shape:
            f = -(grid.G @ grid.pack(arr))
        elif arr.shape == (grid.n_faces,):
            f = arr
        else:
            raise CellProblemError(f"forcing of shape {arr.shape} does not fit the cell grid")
    if not np.any(f):
        z = np.zeros(grid.shape)
        return z, z.copy(), z.copy(), SolveReport(0, 0.0, True, 0.0)
    if mask.geometry.kind == "empty":
        raise CellProblemError("cell Stokes problem ill-posed without solid obstacle")
    u, p, rep = saddle_minres(grid.A, grid.B, f, tol=tol, max_iter=200_000)
    if not rep.converged:
        raise SolveError("cell Stokes problem did not converge", rep)
    ux, uy = grid.unpack_faces(u)
    return ux, uy, grid.unpack(p), rep


def _face_integrals(ux: np.ndarray, uy: np.ndarray, h: float) -> np.ndarray:
    return np.array([ux.sum(), uy.sum()]) * h * h


def permeability(mask: CellMask, tol: float = 1e-11):
    """``K_ij = sum omega^j_i h^2`` from the two unit-forcing flows."""
    if mask.geometry.kind == "empty":
        raise CellProblemError("cell Stokes problem ill-posed without solid obstacle")
    K = np.zeros((2, 2))
    reports = []
    for j, name in enumerate(("e1", "e2")):
        ux, uy, _, rep = solve_stokes_cell(mask, name, tol=tol)
        K[:, j] = _face_integrals(ux, uy, mask.h)
        reports.append(rep)
    return K, reports


def effective_coefficients(geom: CellGeometry, N: int, convention: str = "FluxBalance") -> EffectiveCoefficients:
    mask = build_cell_mask(geom, N)
    sig = solve_sigma(mask, convention)
    _, _, D, chi_reps = solve_correctors(mask)
    residuals = {
        "sigma_compatibility": sig.compatibility_residual,
        "sigma_cg": sig.report.final_residual_norm,
        "corrector_cg": max(r.final_residual_norm for r in chi_reps),
        "D_eff_asymmetry": float(abs(D[0, 1] - D[1, 0])),
    }
    if sig.prescribed_flux is not None:
        residuals["sigma_prescribed_flux"] = sig.prescribed_flux
        residuals["sigma_discrete_flux"] = sig.discrete_flux
    if geom.kind == "empty":
        K = None
    else:
        K, k_reps = permeability(mask)
        residuals["K_asymmetry"] = float(abs(K[0, 1] - K[1, 0]))
        residuals["stokes_residual"] = max(r.final_residual_norm for r in k_reps)
    M = np.zeros(2)
    if np.any(sig.sigma):
        ux, uy, _, rep = solve_stokes_cell(mask, sig.sigma)
        M = _face_integrals(ux, uy, mask.h)
        residuals["M_stokes_residual"] = rep.final_residual_norm
    return EffectiveCoefficients(
        theta=porosity(mask),
        sigma_bar=sig.sigma_bar,
        D_eff=D,
        K=K,
        M=M,
        convention=convention,
        N=mask.N,
        geometry=geom.spec(),
        residuals=residuals,
    )


def richardson_rate(coarse: float, mid: float, fine: float) -> float:
    """Observed order from three levels refined by 2."""
    d1, d2 = abs(coarse - mid), abs(mid - fine)
    if d2 == 0.0:
        return math.inf
    if d1 == 0.0:
        return 0.0
    return math.log2(d1 / d2)
