"""Finite-volume / MAC operators on a masked uniform grid.

Scalars live at active cell centres, velocities on active faces.  With
``G`` the face gradient (entries ``+-1/h``) the pieces fit together as

* ``G``      cell -> face gradient,
* ``G.T``    face -> cell, equal to minus the discrete divergence,
* ``L = G.T G`` the positive Neumann Laplacian ``-Delta_h`` on the pore,
* ``A``      the positive velocity Laplacian with no-slip walls.

Cells and faces outside the pore carry no unknowns.  On a periodic grid
the wraparound faces are kept; otherwise they are removed, which puts
no-flux / no-slip walls on the outer boundary.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .geometry import CellMask, DomainMask
from .linalg import SparseMatrix, assemble

__all__ = ["Grid", "grid_from_mask", "full_grid"]


class Grid:
    """Index bookkeeping and sparse operators for one masked grid."""

    def __init__(self, cell_active: np.ndarray, h: float, periodic: bool):
        act = np.asarray(cell_active, dtype=bool)
        self.shape = act.shape
        self.h = float(h)
        self.periodic = bool(periodic)
        fx = act & np.roll(act, -1, axis=0)
        fy = act & np.roll(act, -1, axis=1)
        if not periodic:
            fx[-1, :] = False
            fy[:, -1] = False
        self.cell_active = act
        self.face_x_active = fx
        self.face_y_active = fy

        self.cell_id = np.full(self.shape, -1, dtype=np.int64)
        self.n_cells = int(act.sum())
        self.cell_id[act] = np.arange(self.n_cells)
        self.fx_id = np.full(self.shape, -1, dtype=np.int64)
        self.fy_id = np.full(self.shape, -1, dtype=np.int64)
        self.n_fx = int(fx.sum())
        self.n_fy = int(fy.sum())
        self.fx_id[fx] = np.arange(self.n_fx)
        self.fy_id[fy] = self.n_fx + np.arange(self.n_fy)
        self.n_faces = self.n_fx + self.n_fy

    # packing ---------------------------------------------------------------

    def pack(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field, dtype=float)[self.cell_active]

    def unpack(self, v: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.cell_active] = v
        return out

    def pack_faces(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(ux, float)[self.face_x_active],
                               np.asarray(uy, float)[self.face_y_active]])

    def unpack_faces(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ux = np.zeros(self.shape)
        uy = np.zeros(self.shape)
        ux[self.face_x_active] = v[: self.n_fx]
        uy[self.face_y_active] = v[self.n_fx:]
        return ux, uy

    @cached_property
    def face_direction(self) -> np.ndarray:
        """0 for x-faces, 1 for y-faces, in packed order."""
        return np.concatenate([np.zeros(self.n_fx, dtype=np.int64),
                               np.ones(self.n_fy, dtype=np.int64)])

    @cached_property
    def face_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Packed ids of the (lower, upper) cell of every active face."""
        nx, ny = self.shape
        ix, jx = np.nonzero(self.face_x_active)
        iy, jy = np.nonzero(self.face_y_active)
        lo = np.concatenate([self.cell_id[ix, jx], self.cell_id[iy, jy]])
        hi = np.concatenate([self.cell_id[(ix + 1) % nx, jx], self.cell_id[iy, (jy + 1) % ny]])
        return lo, hi

    # operators -------------------------------------------------------------

    @cached_property
    def G(self) -> SparseMatrix:
        lo, hi = self.face_cells
        rows = np.arange(self.n_faces)
        inv_h = 1.0 / self.h
        return assemble(
            (np.concatenate([rows, rows]), np.concatenate([hi, lo]),
             np.concatenate([np.full(self.n_faces, inv_h), np.full(self.n_faces, -inv_h)])),
            self.n_faces, self.n_cells,
        )

    @cached_property
    def B(self) -> SparseMatrix:
        """``G.T``: minus the divergence, the constraint block of the saddle system."""
        return self.G.T

    @cached_property
    def L(self) -> SparseMatrix:
        G = self.G
        return SparseMatrix((G.T.to_scipy() @ G.to_scipy()).tocsr(), symmetric=True)

    @cached_property
    def face_average(self) -> SparseMatrix:
        """Arithmetic mean of the two cells adjacent to each active face."""
        lo, hi = self.face_cells
        rows = np.arange(self.n_faces)
        half = np.full(self.n_faces, 0.5)
        return assemble((np.concatenate([rows, rows]), np.concatenate([lo, hi]),
                         np.concatenate([half, half])), self.n_faces, self.n_cells)

    @cached_property
    def A(self) -> SparseMatrix:
        """Positive velocity Laplacian, unit viscosity.

        A missing neighbour along the face normal is a face with ``u = 0``
        one spacing away.  A missing tangential neighbour is a wall half a
        spacing away, handled with a reflected ghost value.
        """
        inv_h2 = 1.0 / self.h**2
        rows, cols, vals = [], [], []
        nx, ny = self.shape
        for act, ids, normal in ((self.face_x_active, self.fx_id, 0),
                                 (self.face_y_active, self.fy_id, 1)):
            i, j = np.nonzero(act)
            me = ids[i, j]
            diag = np.zeros(me.size)
            for axis in (0, 1):
                n_ax = (nx, ny)[axis]
                for step in (-1, 1):
                    ii, jj = i.copy(), j.copy()
                    if axis == 0:
                        ii = (i + step) % nx
                        pos = i
                    else:
                        jj = (j + step) % ny
                        pos = j
                    nb = ids[ii, jj]
                    ok = nb >= 0
                    if not self.periodic:
                        crossing = (pos == 0) if step < 0 else (pos == n_ax - 1)
                        ok &= ~crossing
                    rows.append(me[ok])
                    cols.append(nb[ok])
                    vals.append(np.full(int(ok.sum()), -inv_h2))
                    diag += inv_h2
                    if axis != normal:
                        diag += np.where(ok, 0.0, inv_h2)
            rows.append(me)
            cols.append(me)
            vals.append(diag)
        return assemble((np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)),
                        self.n_faces, self.n_faces, symmetric=True)

    # helpers ---------------------------------------------------------------

    def div(self, u: np.ndarray) -> np.ndarray:
        return -(self.B @ u)

    def grad(self, c: np.ndarray) -> np.ndarray:
        return self.G @ c

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        x = (np.arange(nx) + 0.5) * self.h
        y = (np.arange(ny) + 0.5) * self.h
        X, Y = np.meshgrid(x, y, indexing="ij")
        return X[self.cell_active], Y[self.cell_active]

    def face_centres(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        ix, jx = np.nonzero(self.face_x_active)
        iy, jy = np.nonzero(self.face_y_active)
        x = np.concatenate([(ix + 1.0) * self.h, (iy + 0.5) * self.h])
        y = np.concatenate([(jx + 0.5) * self.h, (jy + 1.0) * self.h])
        return x, y


def grid_from_mask(mask: CellMask | DomainMask, periodic: bool) -> Grid:
    return Grid(mask.cell_active, mask.h, periodic)


def full_grid(n: int, periodic: bool = False) -> Grid:
    """All-active ``n x n`` grid on the unit square."""
    return Grid(np.ones((n, n), dtype=bool), 1.0 / n, periodic)
