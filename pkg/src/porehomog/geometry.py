"""Unit cell geometry, pore/solid masks and the periodic perforated domain.

Arrays are indexed ``[i, j]`` with ``i`` along the first coordinate
(``x1``/``y1``) and ``j`` along the second, cell ``(i, j)`` having its centre
at ``((i + 1/2) h, (j + 1/2) h)``.  Face arrays follow the same layout:
``face_x[i, j]`` is the face between cells ``(i, j)`` and ``(i + 1, j)``,
``face_y[i, j]`` the face between ``(i, j)`` and ``(i, j + 1)``, both with
periodic wraparound.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "GeometryError",
    "CellGeometry",
    "CellMask",
    "DomainMask",
    "indicator",
    "parse_geometry",
    "build_cell_mask",
    "build_domain_mask",
    "porosity",
]


class GeometryError(ValueError):
    """Invalid geometry or mask request."""


@dataclass(frozen=True)
class CellGeometry:
    """Pore/solid split of the unit cell ``Y = (0, 1)^2``.

    ``kind`` is one of ``"disc"`` (solid disc of radius ``r`` centred in the
    cell), ``"slab"`` (pore strip ``a < y2 < b``) or ``"empty"`` (no solid).
    The slab touches the cell boundary and is admitted only as a test
    geometry with a closed-form permeability.
    """

    kind: str
    radius: float = 0.0
    lower: float = 0.0
    upper: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.kind == "disc":
            if not 0.0 < self.radius < 0.5:
                raise GeometryError(f"disc radius must lie in (0, 0.5), got {self.radius}")
        elif self.kind == "slab":
            if not 0.0 <= self.lower < self.upper <= 1.0:
                raise GeometryError(
                    f"slab bounds must satisfy 0 <= a < b <= 1, got ({self.lower}, {self.upper})"
                )
        elif self.kind != "empty":
            raise GeometryError(f"unknown geometry kind {self.kind!r}")
        if not self.label:
            object.__setattr__(self, "label", self.spec())

    @classmethod
    def disc(cls, radius: float) -> CellGeometry:
        return cls("disc", radius=radius)

    @classmethod
    def slab(cls, lower: float, upper: float) -> CellGeometry:
        return cls("slab", lower=lower, upper=upper)

    @classmethod
    def empty(cls) -> CellGeometry:
        return cls("empty")

    def spec(self) -> str:
        """Round-trippable config string, e.g. ``disc:0.25``."""
        if self.kind == "disc":
            return f"disc:{self.radius:g}"
        if self.kind == "slab":
            return f"slab:{self.lower:g}:{self.upper:g}"
        return "empty"

    @property
    def pore_area(self) -> float:
        """Exact ``|Y_p|``."""
        if self.kind == "disc":
            return 1.0 - math.pi * self.radius**2
        if self.kind == "slab":
            return self.upper - self.lower
        return 1.0

    @property
    def interface_length(self) -> float:
        """Exact ``|Gamma_s|`` (zero for the empty cell)."""
        if self.kind == "disc":
            return 2.0 * math.pi * self.radius
        if self.kind == "slab":
            return float(self.lower > 0.0) + float(self.upper < 1.0)
        return 0.0

    def solid_normal(self, y1, y2):
        """Unit normal pointing out of the pore into the solid, near ``(y1, y2)``."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        if self.kind == "disc":
            d1, d2 = 0.5 - y1, 0.5 - y2
            r = np.hypot(d1, d2)
            r = np.where(r > 0.0, r, 1.0)
            return d1 / r, d2 / r
        if self.kind == "slab":
            mid = 0.5 * (self.lower + self.upper)
            return np.zeros_like(y1), np.where(y2 > mid, 1.0, -1.0)
        return np.zeros_like(y1), np.zeros_like(y2)


def parse_geometry(text: str) -> CellGeometry:
    """Parse ``disc:<r>``, ``slab:<a>:<b>`` or ``empty``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "disc" and len(parts) == 2:
            return CellGeometry.disc(float(parts[1]))
        if parts[0] == "slab" and len(parts) == 3:
            return CellGeometry.slab(float(parts[1]), float(parts[2]))
        if parts[0] == "empty" and len(parts) == 1:
            return CellGeometry.empty()
    except ValueError as exc:
        raise GeometryError(f"malformed geometry {text!r}: {exc}") from None
    raise GeometryError(f"malformed geometry {text!r}; expected disc:<r>, slab:<a>:<b> or empty")


def indicator(geom: CellGeometry, y) -> int:
    """Characteristic function of the pore part: 1 in ``Y_p``, 0 in ``Y_s``."""
    y1, y2 = float(y[0]), float(y[1])
    return int(_pore(geom, np.asarray(y1), np.asarray(y2)))


def _pore(geom: CellGeometry, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    if geom.kind == "disc":
        return np.hypot(y1 - 0.5, y2 - 0.5) > geom.radius
    if geom.kind == "slab":
        return (y2 > geom.lower) & (y2 < geom.upper)
    return np.ones(np.broadcast(y1, y2).shape, dtype=bool)


def _faces(active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fx = active & np.roll(active, -1, axis=0)
    fy = active & np.roll(active, -1, axis=1)
    return fx, fy


def _check_connected(active: np.ndarray) -> None:
    """Flood fill with periodic adjacency; raise unless the pore is one piece."""
    if not active.any():
        raise GeometryError("pore space is empty")
    labels, count = ndimage.label(active)
    if count > 1:
        # glue labels that touch across the periodic seams
        parent = list(range(count + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        seams = [(labels[-1, :], labels[0, :]), (labels[:, -1], labels[:, 0])]
        for left, right in seams:
            for a, b in zip(left, right):
                if a and b:
                    ra, rb = find(int(a)), find(int(b))
                    if ra != rb:
                        parent[ra] = rb
        roots = {find(a) for a in range(1, count + 1)}
        if len(roots) > 1:
            raise GeometryError(f"pore space is disconnected on the grid ({len(roots)} components)")


@dataclass(frozen=True)
class CellMask:
    """Pore mask of the unit cell sampled at ``N x N`` cell centres."""

    geometry: CellGeometry
    N: int
    cell_active: np.ndarray = field(repr=False)
    face_x_active: np.ndarray = field(repr=False)
    face_y_active: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return self.cell_active.shape

    def digest(self) -> str:
        return mask_hash(self.cell_active)


@dataclass(frozen=True)
class DomainMask:
    """``k x k`` periodic tiling of a :class:`CellMask`, covering ``Omega = (0, 1)^2``."""

    geometry: CellGeometry
    k: int
    N_cell: int
    cell_active: np.ndarray = field(repr=False)
    face_x_active: np.ndarray = field(repr=False)
    face_y_active: np.ndarray = field(repr=False)
    cell: CellMask = field(repr=False)

    @property
    def eps(self) -> float:
        return 1.0 / self.k

    @property
    def N(self) -> int:
        return self.k * self.N_cell

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return self.cell_active.shape

    def digest(self) -> str:
        return mask_hash(self.cell_active)


def mask_hash(active: np.ndarray) -> str:
    a = np.ascontiguousarray(active, dtype=np.uint8)
    head = f"{a.shape[0]}x{a.shape[1]}:".encode()
    return hashlib.sha256(head + a.tobytes()).hexdigest()


def build_cell_mask(geom: CellGeometry, N: int) -> CellMask:
    if int(N) != N or N < 4:
        raise GeometryError(f"cell resolution must be an integer >= 4, got {N}")
    N = int(N)
    centres = (np.arange(N) + 0.5) / N
    y1, y2 = np.meshgrid(centres, centres, indexing="ij")
    active = _pore(geom, y1, y2)
    _check_connected(active)
    fx, fy = _faces(active)
    for a in (active, fx, fy):
        a.setflags(write=False)
    return CellMask(geom, N, active, fx, fy)


def build_domain_mask(geom: CellGeometry, eps: float, N_cell: int) -> DomainMask:
    k = round(1.0 / eps)
    if k < 1 or abs(1.0 / k - eps) > 1e-12 * max(1.0, 1.0 / eps):
        raise GeometryError(f"eps must be the reciprocal of a positive integer, got {eps}")
    cell = build_cell_mask(geom, N_cell)
    active = np.tile(cell.cell_active, (k, k))
    fx, fy = _faces(active)
    for a in (active, fx, fy):
        a.setflags(write=False)
    return DomainMask(geom, k, cell.N, active, fx, fy, cell)


def porosity(mask: CellMask | DomainMask) -> float:
    """Active-cell fraction."""
    a = mask.cell_active
    return int(np.count_nonzero(a)) / a.size
