"""Convex order between finitely-atomic laws on P(S).

rho1 <=cv rho2 holds iff a dilation exists: a row-stochastic matrix P from
atoms of rho1 to atoms of rho2 whose rows have barycentre equal to the source
atom and which pushes the weights of rho1 onto those of rho2.  Existence is a
linear feasibility problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .higher_level import apply_check_T_exact
from .lp_feasibility import FeasibilityProblem, LPInconclusive, solve_feasibility
from .measure_core import (
    NORM_TOL,
    MeasureError,
    SimplexAtomMeasure,
    canonicalize,
    close_atoms,
    first_moment,
    second_moment_matrix,
    tv_distance,
)
from .rde_model import RdeSpec

DOMINATED = "Dominated"
NOT_DOMINATED = "NotDominated"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Tolerances:
    verdict: float = 1e-8
    lp: float = 1e-9
    negative: float = 1e-12
    row_sum: float = 1e-9
    equality: float = 1e-8
    atoms: float = 1e-7
    band: float = 10.0


DEFAULT_TOLERANCES = Tolerances()


class PreconditionError(ValueError):
    pass


class ConsistencyError(AssertionError):
    """Two computations that must agree did not."""


@dataclass
class DilationWitness:
    P: np.ndarray
    barycenter_residual: float
    mixture_residual: float
    row_sum_residual: float
    min_entry: float

    def valid(self, tols: Tolerances = DEFAULT_TOLERANCES) -> bool:
        return (self.min_entry >= -tols.negative and self.row_sum_residual <= tols.row_sum
                and self.barycenter_residual <= tols.verdict and self.mixture_residual <= tols.verdict)

    def to_json(self) -> dict:
        return {
            "P": self.P.tolist(),
            "barycenter_residual": self.barycenter_residual,
            "mixture_residual": self.mixture_residual,
            "row_sum_residual": self.row_sum_residual,
            "min_entry": self.min_entry,
        }


def witness_from_matrix(P: np.ndarray, rho1: SimplexAtomMeasure,
                        rho2: SimplexAtomMeasure) -> DilationWitness:
    """Measure how far ``P`` is from being a dilation carrying rho1 to rho2."""
    P = np.asarray(P, dtype=float)
    return DilationWitness(
        P=P,
        barycenter_residual=float(np.abs(P @ rho2.points - rho1.points).max()),
        mixture_residual=float(np.abs(rho1.weights @ P - rho2.weights).max()),
        row_sum_residual=float(np.abs(P.sum(axis=1) - 1.0).max()),
        min_entry=float(P.min()),
    )


@dataclass
class CvReport:
    verdict: str
    witness: DilationWitness | None
    first_moment_gap: float
    second_moment_gap: float
    lp_objective: float
    lp_iterations: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def dominated(self) -> bool:
        return self.verdict == DOMINATED

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "first_moment_gap": self.first_moment_gap,
            "second_moment_gap": self.second_moment_gap,
            "lp_objective": self.lp_objective if np.isfinite(self.lp_objective) else None,
            "lp_iterations": self.lp_iterations,
            "witness": self.witness.to_json() if self.witness else None,
            "notes": self.notes,
        }


def jacobi_eigenvalues(M: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    A = np.array(M, dtype=float)
    A = 0.5 * (A + A.T)
    n = len(A)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * rot_p - s * rot_q
                A[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rot_p - s * rot_q
                A[q, :] = s * rot_p + c * rot_q
    return np.sort(np.diag(A))


def second_moment_difference(rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure) -> np.ndarray:
    return second_moment_matrix(rho2) - second_moment_matrix(rho1)


def necessary_checks(rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure) -> tuple[float, float]:
    """(tv gap of first moments, smallest eigenvalue of M2(rho2) - M2(rho1)).

    rho1 <=cv rho2 forces the first to be 0 and the second to be >= 0.
    """
    if rho1.space.size != rho2.space.size:
        raise MeasureError("state spaces differ")
    gap1 = tv_distance(first_moment(rho1), first_moment(rho2))
    gap2 = float(jacobi_eigenvalues(second_moment_difference(rho1, rho2))[0])
    return gap1, gap2


def dilation_problem(rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure) -> FeasibilityProblem:
    """LP in the variables P[i, j] (row-major).

    Each barycentre block drops its last state (implied by the row sum) and
    the mixture block drops its last atom (implied by all row sums).
    """
    a1, a2, k = rho1.n_atoms, rho2.n_atoms, rho1.space.size
    nvar = a1 * a2
    rows, rhs = [], []
    for i in range(a1):
        r = np.zeros(nvar)
        r[i * a2:(i + 1) * a2] = 1.0
        rows.append(r)
        rhs.append(1.0)
        for x in range(k - 1):
            r = np.zeros(nvar)
            r[i * a2:(i + 1) * a2] = rho2.points[:, x]
            rows.append(r)
            rhs.append(rho1.points[i, x])
    for j in range(a2 - 1):
        r = np.zeros(nvar)
        r[j::a2] = rho1.weights
        rows.append(r)
        rhs.append(rho2.weights[j])
    names = [f"P[{i},{j}]" for i in range(a1) for j in range(a2)]
    return FeasibilityProblem(np.array(rows), np.array(rhs), names)


def check_convex_order(rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure,
                       tols: Tolerances = DEFAULT_TOLERANCES) -> CvReport:
    if rho1.space.size != rho2.space.size:
        raise MeasureError("check_convex_order: state spaces differ")
    rho1, rho2 = canonicalize(rho1), canonicalize(rho2)
    gap1, gap2 = necessary_checks(rho1, rho2)
    problem = dilation_problem(rho1, rho2)
    try:
        res = solve_feasibility(problem, feas_tol=tols.lp)
    except LPInconclusive as exc:
        return CvReport(INCONCLUSIVE, None, gap1, gap2, float("nan"), notes=[str(exc)])
    if not res.feasible:
        threshold = tols.lp * (1.0 + float(np.abs(problem.b).max()))
        if res.objective <= tols.band * threshold:
            return CvReport(INCONCLUSIVE, None, gap1, gap2, res.objective, res.iterations,
                            ["phase-1 objective within the inconclusive band"])
        return CvReport(NOT_DOMINATED, None, gap1, gap2, res.objective, res.iterations)
    P = res.x.reshape(rho1.n_atoms, rho2.n_atoms)
    witness = witness_from_matrix(P, rho1, rho2)
    if not witness.valid(tols):
        return CvReport(INCONCLUSIVE, witness, gap1, gap2, res.objective, res.iterations,
                        ["LP point fails the dilation invariants"])
    return CvReport(DOMINATED, witness, gap1, gap2, res.objective, res.iterations)


def equality_from_second_moments(rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure,
                                 tols: Tolerances = DEFAULT_TOLERANCES) -> bool:
    """For rho1 <=cv rho2: equal second moment matrices force rho1 == rho2."""
    report = check_convex_order(rho1, rho2, tols)
    if not report.dominated:
        raise PreconditionError(f"rho1 <=cv rho2 does not hold (verdict {report.verdict})")
    eig = jacobi_eigenvalues(second_moment_difference(rho1, rho2))
    equal = bool(np.abs(eig).max() <= tols.equality)
    if equal and not close_atoms(rho1, rho2, tols.atoms):
        raise ConsistencyError("second moments agree but canonical atom lists differ")
    return equal


def monotonicity_probe(spec: RdeSpec, rho1: SimplexAtomMeasure, rho2: SimplexAtomMeasure,
                       eps: float = NORM_TOL, tols: Tolerances = DEFAULT_TOLERANCES) -> CvReport:
    """Apply the exact higher-level map to a dominated pair and re-check the order."""
    pre = check_convex_order(rho1, rho2, tols)
    if not pre.dominated:
        raise PreconditionError(f"rho1 <=cv rho2 does not hold (verdict {pre.verdict})")
    return check_convex_order(apply_check_T_exact(spec, rho1, eps), apply_check_T_exact(spec, rho2, eps), tols)


def random_dilation(rho: SimplexAtomMeasure, rng: np.random.Generator,
                    max_split: int = 3, min_split: int = 1, spread: tuple[float, float] = (0.2, 1.0)):
    """Split every atom into a random mixture with the same barycentre.

    Returns (rho2, P) where P is the dilation used, so rho <=cv rho2 holds by
    construction.  Pieces stay on the support of the atom they split.
    """
    k = rho.space.size
    weights, points, blocks = [], [], []
    for w, mu in zip(rho.weights, rho.points):
        m = int(rng.integers(min_split, max_split + 1))
        support = np.flatnonzero(mu > 0)
        r = np.zeros((m, k))
        r[:, support] = rng.dirichlet(np.ones(len(support)), m)
        lam = rng.dirichlet(np.ones(m))
        d = r - lam @ r
        with np.errstate(divide="ignore", invalid="ignore"):
            limits = np.where(d < 0, mu[None, :] / -d, np.inf)
        c_max = min(float(limits.min()), 1.0)
        c = c_max * rng.uniform(*spread)
        q = np.clip(mu[None, :] + c * d, 0.0, None)
        q /= q.sum(axis=1, keepdims=True)
        weights.append(w * lam)
        points.append(q)
        blocks.append(lam)
    P = np.zeros((rho.n_atoms, sum(len(b) for b in blocks)))
    col = 0
    for i, lam in enumerate(blocks):
        P[i, col:col + len(lam)] = lam
        col += len(lam)
    rho2 = SimplexAtomMeasure(rho.space, np.concatenate(weights), np.concatenate(points))
    return rho2, P


def random_with_mean(mu, rng: np.random.Generator, n_atoms: int) -> SimplexAtomMeasure:
    """Random atomic law with first moment ``mu`` (a random split of delta_mu)."""
    return random_dilation(SimplexAtomMeasure.dirac(mu), rng, max_split=n_atoms, min_split=n_atoms)[0]
