"""Periodic unfolding of grid fields and two-scale error measures.

On a grid aligned with the eps-lattice (``n = k * N_cell`` cells per side)
the unfolding operator ``T u(x, y) = u(eps [x/eps] + eps y)`` is an exact
reshape: macro cell ``(I, J)`` and micro point ``(i, j)`` pick the global
cell ``(I N_cell + i, J N_cell + j)``.  Unfolded arrays have shape
``(k, k, N_cell, N_cell)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "UnfoldingError",
    "UnfoldedField",
    "TwoScaleRow",
    "TwoScaleReport",
    "unfold",
    "refold",
    "extend_solid",
    "integral_identity_check",
    "product_grid",
    "sample_limit",
    "two_scale_error",
    "pairing",
    "two_scale_report",
]


class UnfoldingError(ValueError):
    pass


@dataclass(frozen=True)
class UnfoldedField:
    values: np.ndarray  # (k, k, N_cell, N_cell)
    eps: float

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def N_cell(self) -> int:
        return self.values.shape[2]

    @property
    def h_y(self) -> float:
        return 1.0 / self.N_cell

    def weight(self) -> float:
        """Product-measure weight of one (macro cell, micro point) sample."""
        return self.eps**2 * self.h_y**2


def _k_of(eps: float) -> int:
    k = round(1.0 / eps)
    if k < 1 or abs(k * eps - 1.0) > 1e-12:
        raise UnfoldingError(f"eps must be 1/k for a positive integer k, got {eps}")
    return k


def unfold(field: np.ndarray, eps: float) -> UnfoldedField:
    f = np.asarray(field)
    k = _k_of(eps)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise UnfoldingError(f"expected a square 2-D field, got shape {f.shape}")
    n = f.shape[0]
    if n % k:
        raise UnfoldingError(f"grid of {n} cells is not aligned with the eps-lattice (k={k})")
    N = n // k
    vals = f.reshape(k, N, k, N).transpose(0, 2, 1, 3)
    return UnfoldedField(np.ascontiguousarray(vals), float(eps))


def refold(unfolded: UnfoldedField) -> np.ndarray:
    """Inverse of :func:`unfold` (``T u(x, {x/eps}) = u(x)``)."""
    k, N = unfolded.k, unfolded.N_cell
    return np.ascontiguousarray(unfolded.values.transpose(0, 2, 1, 3).reshape(k * N, k * N))


def extend_solid(field: np.ndarray, active: np.ndarray, k: int, mode: str = "zero") -> np.ndarray:
    """Fill solid cells with zero or with the pore average of their eps-cell."""
    out = np.where(active, field, 0.0)
    if mode == "zero":
        return out
    if mode != "cell_average":
        raise UnfoldingError(f"unknown extension {mode!r}")
    n = out.shape[0]
    N = n // k
    s = out.reshape(k, N, k, N).sum(axis=(1, 3))
    cnt = active.reshape(k, N, k, N).sum(axis=(1, 3))
    avg = np.divide(s, cnt, out=np.zeros_like(s), where=cnt > 0)
    fill = np.repeat(np.repeat(avg, N, axis=0), N, axis=1)
    return np.where(active, field, fill)


def integral_identity_check(field: np.ndarray, eps: float, printed: bool = False):
    """``(lhs, rhs, |lhs - rhs|)`` for ``int_Omega u = (1/|Y|) int_{Omega x Y} T u``.

    ``printed=True`` evaluates the variant with the extra ``1/(eps |Y|)``
    factor instead; it disagrees with ``lhs`` by the factor ``1/eps``.
    """
    f = np.asarray(field, dtype=float)
    n = f.shape[0]
    lhs = float(f.sum()) / (n * n)
    T = unfold(f, eps)
    rhs = float(T.values.sum()) * T.weight()
    if printed:
        rhs /= eps
    return lhs, rhs, abs(lhs - rhs)


def product_grid(k: int, N_cell: int):
    """Macro-cell centres ``(X1, X2)`` and micro points ``(Y1, Y2)`` broadcast
    to shape ``(k, k, N_cell, N_cell)``."""
    eps = 1.0 / k
    xc = (np.arange(k) + 0.5) * eps
    yc = (np.arange(N_cell) + 0.5) / N_cell
    X1 = xc[:, None, None, None]
    X2 = xc[None, :, None, None]
    Y1 = yc[None, None, :, None]
    Y2 = yc[None, None, None, :]
    shape = (k, k, N_cell, N_cell)
    return tuple(np.broadcast_to(a, shape) for a in (X1, X2, Y1, Y2))


def sample_limit(fn: Callable, k: int, N_cell: int) -> np.ndarray:
    """Evaluate ``fn(x1, x2, y1, y2)`` on the product grid."""
    X1, X2, Y1, Y2 = product_grid(k, N_cell)
    return np.broadcast_to(np.asarray(fn(X1, X2, Y1, Y2), dtype=float), X1.shape).copy()


def two_scale_error(unfolded: UnfoldedField, limit) -> float:
    """Discrete ``L^2(Omega x Y)`` distance to a limit (array or callable)."""
    if callable(limit):
        limit = sample_limit(limit, unfolded.k, unfolded.N_cell)
    limit = np.asarray(limit, dtype=float)
    if limit.shape != unfolded.values.shape:
        raise UnfoldingError(f"limit shape {limit.shape} does not match {unfolded.values.shape}")
    d = unfolded.values - limit
    return float(np.sqrt(np.sum(d * d) * unfolded.weight()))


def pairing(field: np.ndarray, testfn: np.ndarray) -> float:
    """``int_Omega u(x) phi(x, x/eps) dx`` with ``phi`` pre-sampled on the grid."""
    u = np.asarray(field, dtype=float)
    phi = np.asarray(testfn, dtype=float)
    if u.shape != phi.shape:
        raise UnfoldingError(f"field shape {u.shape} does not match test function {phi.shape}")
    n = u.shape[0]
    return float(np.sum(u * phi)) / (n * n)


@dataclass(frozen=True)
class TwoScaleRow:
    eps: float
    distance: float
    pairing: float


@dataclass(frozen=True)
class TwoScaleReport:
    rows: tuple[TwoScaleRow, ...]
    monotone: bool


def two_scale_report(rows) -> TwoScaleReport:
    """Sort by decreasing eps and check strictly decreasing distances."""
    rows = tuple(sorted(rows, key=lambda r: -r.eps))
    if any(r.distance < 0.0 for r in rows):
        raise UnfoldingError("negative distance")
    d = [r.distance for r in rows]
    monotone = all(b < a for a, b in zip(d, d[1:]))
    return TwoScaleReport(rows, monotone)
