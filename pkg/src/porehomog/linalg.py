"""Sparse matrices and the Krylov/saddle-point solvers used by every solve.

Storage is compressed-row (scipy's CSR behind a thin wrapper that enforces
sorted, duplicate-free, zero-free rows).  The iterative methods are written
out here so that iteration counts, stopping rules and residual bookkeeping
are fixed and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "AssemblyError",
    "SolveError",
    "SparseMatrix",
    "SolveReport",
    "assemble",
    "cg_solve",
    "minres_solve",
    "uzawa_solve",
    "saddle_minres",
    "project_mean_zero",
]

_GUARD = 1e-300


class AssemblyError(ValueError):
    pass


class SolveError(RuntimeError):
    """A linear solve did not converge; carries the :class:`SolveReport`."""

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    initial_residual_norm: float = 0.0


class SparseMatrix:
    """Immutable CSR matrix.

    Within each row column indices are strictly increasing and explicit zeros
    are absent.  ``symmetric=True`` asserts exact symmetry at construction.
    """

    __slots__ = ("_csr", "symmetric")

    def __init__(self, csr: sp.csr_matrix, symmetric: bool = False):
        csr = sp.csr_matrix(csr, dtype=float)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        for a in (csr.data, csr.indices, csr.indptr):
            a.setflags(write=False)
        self._csr = csr
        self.symmetric = bool(symmetric)
        if symmetric:
            asym = abs(csr - csr.T)
            if asym.nnz and asym.max() != 0.0:
                raise AssemblyError(f"matrix flagged symmetric but max|A - A^T| = {asym.max():.3e}")

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def T(self) -> SparseMatrix:
        return SparseMatrix(self._csr.T.tocsr(), self.symmetric)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix(self._csr @ other._csr)
        return self._csr @ other

    def __add__(self, other: SparseMatrix) -> SparseMatrix:
        return SparseMatrix(self._csr + other._csr, self.symmetric and other.symmetric)

    def __mul__(self, scalar: float) -> SparseMatrix:
        return SparseMatrix(self._csr * float(scalar), self.symmetric)

    __rmul__ = __mul__

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def max_asymmetry(self) -> float:
        d = abs(self._csr - self._csr.T)
        return float(d.max()) if d.nnz else 0.0

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, symmetric={self.symmetric})"


def assemble(triplets, n_rows: int, n_cols: int, symmetric: bool = False) -> SparseMatrix:
    """Build a matrix from ``(row, col, value)`` triplets, summing duplicates.

    ``triplets`` is either an iterable of 3-tuples or a tuple of three
    equal-length arrays ``(rows, cols, values)``.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(t) for t in triplets)
    else:
        trip = list(triplets)
        rows = np.array([t[0] for t in trip], dtype=np.int64)
        cols = np.array([t[1] for t in trip], dtype=np.int64)
        vals = np.array([t[2] for t in trip], dtype=float)
    rows = rows.astype(np.int64, copy=False)
    cols = cols.astype(np.int64, copy=False)
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise AssemblyError(
            f"triplet #{i} ({rows[i]}, {cols[i]}, {vals[i]!r}) out of range for {n_rows}x{n_cols}"
        )
    coo = sp.coo_matrix((vals.astype(float), (rows, cols)), shape=(n_rows, n_cols))
    return SparseMatrix(coo.tocsr(), symmetric)


def _as_operator(A):
    if isinstance(A, SparseMatrix):
        return A.matvec
    if sp.issparse(A):
        return lambda x: A @ x
    if isinstance(A, np.ndarray):
        return lambda x: A @ x
    return A


def project_mean_zero(v: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Subtract the weighted mean of ``v``."""
    v = np.asarray(v, dtype=float)
    if weights is None:
        if v.size == 0:
            raise ValueError("project_mean_zero: total weight is zero")
        return v - v.mean()
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0.0:
        raise ValueError("project_mean_zero: total weight is zero")
    return v - np.dot(w, v) / total


def cg_solve(
    A,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0: np.ndarray | None = None,
    jacobi: bool = False,
    mean_zero: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Conjugate gradients for symmetric positive (semi)definite ``A``.

    Stops when the true residual ``||b - A x||`` falls below
    ``tol * (||b|| + guard)`` (``||b||`` is the residual of the zero guess,
    so warm starts do not tighten the target).  With ``mean_zero`` the right-hand side
    and iterates are kept orthogonal to constants (consistent singular
    systems with a constant null space).
    """
    matvec = _as_operator(A)
    b = np.asarray(b, dtype=float)
    if mean_zero:
        b = project_mean_zero(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if mean_zero:
        x = project_mean_zero(x)
    r = b - matvec(x) if x0 is not None else b.copy()
    if mean_zero:
        r = project_mean_zero(r)
    r0 = float(np.linalg.norm(b))
    target = tol * (r0 + _GUARD)
    rnorm = float(np.linalg.norm(r))
    if r0 == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, 0.0)
    if rnorm <= target:
        return x, SolveReport(0, rnorm, True, r0)
    dinv = None
    if jacobi:
        d = A.diagonal() if hasattr(A, "diagonal") else None
        if d is None:
            raise ValueError("jacobi preconditioning needs an explicit matrix")
        dinv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), 1.0)

    it = 0
    pAp = 1.0
    best = rnorm
    while True:
        z = r * dinv if dinv is not None else r
        if mean_zero and dinv is not None:
            z = project_mean_zero(z)
        p = z.copy()
        rz = float(np.dot(r, z))
        while it < max_iter and rnorm > target:
            Ap = matvec(p)
            pAp = float(np.dot(p, Ap))
            if pAp <= 0.0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if mean_zero:
                r = project_mean_zero(r)
            it += 1
            rnorm = float(np.linalg.norm(r))
            z = r * dinv if dinv is not None else r
            if mean_zero and dinv is not None:
                z = project_mean_zero(z)
            rz_new = float(np.dot(r, z))
            p = z + (rz_new / rz) * p
            rz = rz_new
        # confirm with the true residual; restart if the recursion drifted
        r = b - matvec(x)
        if mean_zero:
            r = project_mean_zero(r)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target or it >= max_iter or pAp <= 0.0:
            break
        # restarts that no longer halve the residual have hit the rounding floor
        if rnorm > 0.5 * best:
            break
        best = rnorm
    return x, SolveReport(it, rnorm, rnorm <= target, r0)


def minres_solve(
    A,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """MINRES (Paige-Saunders) for symmetric, possibly indefinite ``A``."""
    matvec = _as_operator(A)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r1 = b - matvec(x) if x0 is not None else b.copy()
    beta1 = float(np.linalg.norm(r1))
    r0 = float(np.linalg.norm(b))
    target = tol * (r0 + _GUARD)
    if r0 == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, 0.0)
    if beta1 <= target:
        return x, SolveReport(0, beta1, True, r0)

    it = 0
    while True:
        v_old = np.zeros_like(b)
        v = r1 / beta1
        beta = beta1
        w = np.zeros_like(b)
        w_old = np.zeros_like(b)
        phibar = beta1
        c, s = -1.0, 0.0
        dbar = 0.0
        eps_ = 0.0
        while it < max_iter and abs(phibar) > target:
            Av = matvec(v)
            alpha = float(np.dot(v, Av))
            y = Av - alpha * v - beta * v_old
            beta_new = float(np.linalg.norm(y))
            # apply previous rotation to the new column
            oldeps = eps_
            delta = c * dbar + s * alpha
            gbar = s * dbar - c * alpha
            eps_ = s * beta_new
            dbar = -c * beta_new
            gamma = max(np.hypot(gbar, beta_new), _GUARD)
            c, s = gbar / gamma, beta_new / gamma
            phi = c * phibar
            phibar = s * phibar
            w_new = (v - oldeps * w_old - delta * w) / gamma
            x += phi * w_new
            w_old, w = w, w_new
            v_old = v
            if beta_new == 0.0:
                it += 1
                break
            v = y / beta_new
            beta = beta_new
            it += 1
        r1 = b - matvec(x)
        rnorm = float(np.linalg.norm(r1))
        if rnorm <= target or it >= max_iter:
            break
        beta1 = rnorm
    return x, SolveReport(it, rnorm, rnorm <= target, r0)


def uzawa_solve(
    A,
    B: SparseMatrix,
    f: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 5_000,
    method: str = "cg",
    step: float = 1.0,
    inner_tol: float | None = None,
    inner_max_iter: int = 20_000,
    u0: np.ndarray | None = None,
    p0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Solve ``A u + B^T p = f``, ``B u = 0`` by Uzawa iteration.

    ``method="richardson"`` is the classical fixed-step scheme
    ``p <- p + step * B u``; ``method="cg"`` runs conjugate gradients on the
    pressure Schur complement ``B A^-1 B^T`` (same fixed point, far fewer
    outer sweeps).  Each outer sweep does one inner CG solve with ``A``.
    Pressure is returned with zero mean.  Converged when
    ``sqrt(||A u + B^T p - f||^2 + ||B u||^2) <= tol * (||f|| + guard)``.
    """
    if method not in ("cg", "richardson"):
        raise ValueError(f"unknown Uzawa method {method!r}")
    f = np.asarray(f, dtype=float)
    Amv = _as_operator(A)
    Bt = B.T
    fnorm = float(np.linalg.norm(f))
    n_p = B.n_rows
    if fnorm == 0.0 and u0 is None and p0 is None:
        return np.zeros_like(f), np.zeros(n_p), SolveReport(0, 0.0, True, 0.0)
    target = tol * (fnorm + _GUARD)
    # inner solves sit three digits below the outer target, but not under the CG rounding floor
    itol = inner_tol if inner_tol is not None else max(1e-3 * tol, 1e-13)

    def inner(rhs, guess=None):
        x, rep = cg_solve(A, rhs, tol=itol, max_iter=inner_max_iter, x0=guess)
        if not rep.converged:
            raise SolveError("Uzawa inner velocity solve failed to converge", rep)
        return x

    p = np.zeros(n_p) if p0 is None else project_mean_zero(np.asarray(p0, dtype=float))
    u = inner(f - Bt @ p, u0)
    rho = B @ u

    def residual(u, p):
        m = Amv(u) + Bt @ p - f
        d = B @ u
        return float(np.sqrt(np.dot(m, m) + np.dot(d, d)))

    it = 0
    res = residual(u, p)
    if method == "richardson":
        while it < max_iter and res > target:
            p = project_mean_zero(p + step * rho)
            u = inner(f - Bt @ p, u)
            rho = B @ u
            it += 1
            res = residual(u, p)
    else:
        d = project_mean_zero(rho)
        rr = float(np.dot(d, d))
        while it < max_iter and res > target and rr > 0.0:
            z = inner(Bt @ d)
            Sd = B @ z
            dSd = float(np.dot(d, Sd))
            if dSd <= 0.0:
                break
            alpha = rr / dSd
            p = p + alpha * d
            u = u - alpha * z
            rho = project_mean_zero(B @ u)
            it += 1
            rr_new = float(np.dot(rho, rho))
            d = rho + (rr_new / rr) * d
            rr = rr_new
            res = residual(u, p)
    p = project_mean_zero(p)
    return u, p, SolveReport(it, res, res <= target, fnorm)


def saddle_minres(
    A,
    B: SparseMatrix,
    f: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50_000,
    u0: np.ndarray | None = None,
    p0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Solve the same saddle system as :func:`uzawa_solve` with MINRES on
    the symmetric indefinite block operator ``[[A, B^T], [B, 0]]``.

    The constant-pressure null space is consistent with the right-hand side
    and is removed afterwards by projecting ``p`` to zero mean.
    """
    f = np.asarray(f, dtype=float)
    n_u = f.size
    n_p = B.n_rows
    Amv = _as_operator(A)
    Bt = B.T

    def op(x):
        u, p = x[:n_u], x[n_u:]
        return np.concatenate([Amv(u) + Bt @ p, B @ u])

    rhs = np.concatenate([f, np.zeros(n_p)])
    x0 = None
    if u0 is not None or p0 is not None:
        x0 = np.concatenate([np.zeros(n_u) if u0 is None else u0,
                             np.zeros(n_p) if p0 is None else p0])
    x, rep = minres_solve(op, rhs, tol=tol, max_iter=max_iter, x0=x0)
    return x[:n_u], project_mean_zero(x[n_u:]), rep
