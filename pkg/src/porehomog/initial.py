"""Initial order-parameter fields.

Every initializer is a function of the cell centre coordinates only (plus
the seed), so runs at different resolutions or scales see the same data
wherever that makes sense.  Values always lie in ``[-1, 1]``.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["RNG_NAME", "InitialError", "make_initial", "parse_initial"]

# recorded in manifests so the random stream can be reproduced elsewhere
RNG_NAME = "numpy.random.Generator(PCG64)"

_SMOOTH_MODES = 4


class InitialError(ValueError):
    pass


def parse_initial(text: str) -> tuple[str, float | None]:
    """``constant:<v>``, ``random``, ``smooth`` or ``stripe[:<width>]``."""
    parts = text.strip().split(":")
    kind = parts[0]
    if kind == "constant" and len(parts) == 2:
        v = _number(parts[1], text)
        if not -1.0 <= v <= 1.0:
            raise InitialError(f"constant initial value must lie in [-1, 1], got {v}")
        return kind, v
    if kind in ("random", "smooth") and len(parts) == 1:
        return kind, None
    if kind == "stripe" and len(parts) in (1, 2):
        width = _number(parts[1], text) if len(parts) == 2 else 0.1
        if width <= 0.0:
            raise InitialError(f"stripe width must be positive, got {width}")
        return kind, width
    raise InitialError(f"malformed initializer {text!r}; expected constant:<v>, random, smooth or stripe[:<w>]")


def _number(s: str, text: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise InitialError(f"malformed initializer {text!r}") from None


def make_initial(text: str, n: int, seed: int = 0) -> np.ndarray:
    """Full ``n x n`` field on the unit square (solid cells included)."""
    kind, arg = parse_initial(text)
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    if kind == "constant":
        return np.full((n, n), float(arg))
    if kind == "random":
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.0, 1.0, size=(n, n))
    if kind == "stripe":
        return np.tanh((X - 0.5) / (math.sqrt(2.0) * arg))
    # smooth: a few seeded Neumann cosine modes, scaled by the l1 norm of the
    # coefficients so the bound does not depend on the grid
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-1.0, 1.0, size=(_SMOOTH_MODES, _SMOOTH_MODES))
    coef[0, 0] = 0.0
    m = np.arange(_SMOOTH_MODES)
    coef /= 1.0 + m[:, None] ** 2 + m[None, :] ** 2
    cx = np.cos(math.pi * m[:, None, None] * X[None])
    cy = np.cos(math.pi * m[:, None, None] * Y[None])
    field = np.einsum("ab,aij,bij->ij", coef, cx, cy)
    return 0.9 * field / np.abs(coef).sum()
