"""Phase-1 simplex for feasibility systems {x >= 0, A x = b}.

Dense tableau.  The entering column is chosen by Bland's rule (lowest
index with negative reduced cost).  The leaving row uses a two-pass Harris
ratio test: rows whose ratio is within ``harris_tol`` slack of the minimum
are eligible and the largest pivot among them wins.  Entries of the
entering column below ``rel_pivot_tol`` times its largest entry never pivot.
Without these safeguards degenerate rows pick up drift of order 1e-11, get
chosen as pivots, and the tableau either blows up or cycles.

Only feasibility is decided; there is no phase 2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dger

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9
RANK_TOL = 1e-10
REL_PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-9


class LPInconclusive(RuntimeError):
    """The iteration cap was hit before phase 1 terminated."""


@dataclass
class FeasibilityProblem:
    A: np.ndarray
    b: np.ndarray
    names: Sequence[str] | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        m, n = self.A.shape
        if m < 1 or n < 1:
            raise ValueError("A must have at least one row and one column")
        if self.b.shape != (m,):
            raise ValueError(f"b has {self.b.shape[0]} entries, A has {m} rows")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("A and b must be finite")
        if self.names is not None and len(self.names) != n:
            raise ValueError("one name per variable is required")


@dataclass
class FeasibilityResult:
    feasible: bool
    x: np.ndarray | None
    objective: float
    residual: float
    iterations: int
    basis: list[int] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "feasible" if self.feasible else "infeasible"


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    """Gauss-Jordan step in place; T must be Fortran-ordered float64 so the
    BLAS rank-one update does not copy."""
    T[row] /= T[row, col]
    factor = T[:, col].copy()
    factor[row] = 0.0
    out = dger(-1.0, factor, T[row].copy(), a=T, overwrite_a=True)
    if out is not T:
        T[...] = out


def dump_tableau(T: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(T.tolist())


def independent_rows(A: np.ndarray, b: np.ndarray, tol: float = RANK_TOL) -> np.ndarray | None:
    """Indices of a maximal linearly independent row subset, provided every
    dropped row is consistent (its b entry is the same combination of the
    kept ones).  Returns None when some dependent row is inconsistent."""
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return None
    rank = int(np.sum(d > tol * d[0]))
    if rank == A.shape[0]:
        return np.arange(A.shape[0])
    keep, drop = np.sort(piv[:rank]), piv[rank:]
    coef, *_ = np.linalg.lstsq(A[keep].T, A[drop].T, rcond=None)
    scale = 1.0 + np.abs(b).max()
    if np.abs(coef.T @ b[keep] - b[drop]).max() > tol * scale * max(1.0, np.abs(coef).max()):
        return None
    return keep


def solve_feasibility(p: FeasibilityProblem, pivot_tol: float = PIVOT_TOL,
                      feas_tol: float = FEAS_TOL, max_iter: int | None = None,
                      presolve: bool = True, rel_pivot_tol: float = REL_PIVOT_TOL,
                      harris_tol: float = HARRIS_TOL, debug_csv: str | None = None) -> FeasibilityResult:
    """Minimise the sum of artificial variables; feasible iff the optimum is
    at most ``feas_tol * (1 + max|b|)``.

    With ``presolve`` consistent linearly dependent rows are removed first;
    pivoting on the drift left in such rows is what breaks dense tableaus.
    """
    A, b = p.A.copy(), p.b.copy()
    if presolve and A.shape[0] > 1:
        rows = independent_rows(A, b)
        if rows is not None:
            A, b = A[rows], b[rows]
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    if max_iter is None:
        max_iter = 50 * (m + n)

    T = np.zeros((m + 1, n + m + 1), order="F")
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    it = 0
    while True:
        reduced = T[m, :-1]
        candidates = np.flatnonzero(reduced < -pivot_tol)
        if len(candidates) == 0:
            break
        if it >= max_iter:
            raise LPInconclusive(f"phase 1 did not terminate within {max_iter} pivots")
        col = int(candidates[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > max(pivot_tol, rel_pivot_tol * np.abs(column).max()))
        if len(rows) == 0:
            # unbounded direction cannot occur in phase 1 (objective bounded below by 0)
            raise LPInconclusive(f"no pivot row for entering column {col}")
        rhs = np.maximum(T[rows, -1], 0.0)
        limit = ((rhs + harris_tol) / column[rows]).min()
        eligible = rows[rhs / column[rows] <= limit]
        row = int(eligible[np.argmax(column[eligible])])
        _pivot(T, row, col)
        basis[row] = col
        it += 1

    if debug_csv:
        dump_tableau(T, debug_csv)
    objective = max(0.0, -float(T[m, -1]))
    bnorm = float(np.abs(p.b).max())
    threshold = feas_tol * (1.0 + bnorm)
    if objective > threshold:
        return FeasibilityResult(False, None, objective, np.inf, it, basis)

    x = np.zeros(n)
    for r, var in enumerate(basis):
        if var < n:
            x[var] = T[r, -1]
    x = _refine(p.A, p.b, x, [v for v in basis if v < n])
    residual = float(np.abs(p.A @ x - p.b).max())
    if residual > threshold:
        raise LPInconclusive(f"phase 1 reached {objective:.2e} but the recovered point has residual {residual:.2e}")
    return FeasibilityResult(True, x, objective, residual, it, basis)


def _refine(A: np.ndarray, b: np.ndarray, x: np.ndarray, support: list[int]) -> np.ndarray:
    """Re-solve for the basic variables against the original columns, keeping
    the result only if it is nonnegative and no worse than the tableau values."""
    x = np.maximum(x, 0.0)
    if not support:
        return x
    sol, *_ = np.linalg.lstsq(A[:, support], b, rcond=None)
    if sol.min() < -1e-12:
        return x
    y = np.zeros_like(x)
    y[support] = np.maximum(sol, 0.0)
    if np.abs(A @ y - b).max() <= np.abs(A @ x - b).max():
        return y
    return x
