"""Endogeny verdicts from the bivariate map and from the higher-level map.

Both routes start at the independent coupling mu x mu (equivalently at
delta_mu one level up) and iterate.  The limit is the diagonal coupling iff
the fixed point is endogenous.  Because the two routes compute the same
second moment measures step by step, their traces must agree.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .counter_rng import thread_count
from .higher_level import apply_check_T_exact, candidate_count, iterate_check_T, reduce_second_moment
from .measure_core import (
    NORM_TOL,
    Measure,
    SimplexAtomMeasure,
    TensorMeasure,
    diag_measure,
    diagonal_mass,
    moment_measure,
    product,
    tv_distance,
)
from .rde_model import RdeSpec, apply_Tn, require_fixed_point

ENDOGENOUS = "Endogenous"
NON_ENDOGENOUS = "NonEndogenous"
INCONCLUSIVE = "Inconclusive"

T_MAX = 2000
TOL = 1e-10
N_STARTS = 32
BAND = 10.0


@dataclass
class TracePoint:
    t: int
    diag_mass: float
    residual: float


@dataclass
class EndogenyVerdict:
    status: str
    route: str
    diag_mass: float
    tv_gap: float
    iterations: int
    witness: TensorMeasure | None
    converged: bool
    residual: float
    tail_bound: float
    trace: list[TracePoint] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "route": self.route,
            "diag_mass": self.diag_mass,
            "tv_gap": self.tv_gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "tail_bound": self.tail_bound if np.isfinite(self.tail_bound) else None,
            "witness": self.witness.to_json() if self.witness is not None else None,
            "trace": [{"t": p.t, "diag_mass": p.diag_mass, "residual": p.residual} for p in self.trace],
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        rows = ["t,diag_mass,residual"]
        rows += [f"{p.t},{float(p.diag_mass)!r},{float(p.residual)!r}" for p in self.trace]
        return "\n".join(rows) + "\n"


def tail_bound(residuals: list[float]) -> float:
    """Bound on the distance from the last iterate to the limit, assuming the
    residuals keep shrinking geometrically at the last observed ratio."""
    r = residuals[-1]
    if r == 0.0:
        return 0.0
    if len(residuals) < 2 or residuals[-2] == 0.0:
        return float("inf")
    q = r / residuals[-2]
    return r / (1.0 - q) if q < 1.0 else float("inf")


def classify(gap: float, converged: bool, tol: float, tail: float) -> str:
    """Endogenous iff the limit is within tol of the diagonal coupling;
    NonEndogenous only when it is clearly separated from it, by 10x both the
    tolerance and the estimated distance still to travel."""
    if not converged:
        return INCONCLUSIVE
    if gap <= tol:
        return ENDOGENOUS
    if gap > BAND * max(tol, tail):
        return NON_ENDOGENOUS
    return INCONCLUSIVE


def iterate_bivariate(spec: RdeSpec, nu: TensorMeasure, t_max: int = T_MAX, tol: float = TOL):
    """Iterate T^(2) from ``nu``.  Returns (newest iterate, trace, converged)
    with the same stopping convention as :func:`rde_model.iterate_T`."""
    trace = []
    for t in range(t_max + 1):
        nxt = apply_Tn(spec, nu, 2)
        r = tv_distance(nxt, nu)
        trace.append(TracePoint(t, diagonal_mass(nu), r))
        if r <= tol:
            return nxt, trace, True
        if t == t_max:
            break
        nu = nxt
    return nxt, trace, False


def _verdict(route: str, mu: Measure, nu: TensorMeasure, trace: list[TracePoint], converged: bool,
             tol: float, notes: list[str]) -> EndogenyVerdict:
    gap = tv_distance(nu, diag_measure(mu, 2))
    tail = tail_bound([p.residual for p in trace])
    status = classify(gap, converged, tol, tail)
    if not converged:
        notes.append(f"no convergence within {trace[-1].t} steps (last residual {trace[-1].residual:.3e})")
    elif status == INCONCLUSIVE:
        notes.append(f"gap {gap:.3e} lies in the band between tol and 10*max(tol, tail bound {tail:.3e})")
    return EndogenyVerdict(status, route, diagonal_mass(nu), gap, trace[-1].t, nu, converged,
                           trace[-1].residual, tail, trace, notes)


def endogeny_bivariate(spec: RdeSpec, mu: Measure, t_max: int = T_MAX, tol: float = TOL) -> EndogenyVerdict:
    require_fixed_point(spec, mu, tol)
    nu, trace, converged = iterate_bivariate(spec, product([mu, mu]), t_max, tol)
    return _verdict("bivariate", mu, nu, trace, converged, tol, [])


def endogeny_higherlevel(spec: RdeSpec, mu: Measure, mode: str = "exact", t_max: int = T_MAX,
                         tol: float = TOL, eps: float = NORM_TOL, n_particles: int = 10**4,
                         seed: int = 0, reduce: bool = True, threads: int | None = None) -> EndogenyVerdict:
    """Iterate the higher-level map from delta_mu and test whether the second
    moment measure of the limit is the diagonal coupling.

    In exact mode with ``reduce`` the atom set is pruned whenever it grows
    large, in a way that keeps first and second moment measures exact.
    """
    rho, report, converged = iterate_check_T(spec, mu, t_max, tol, mode, eps, n_particles, seed,
                                             reduce=reduce and mode == "exact", threads=threads)
    trace = [TracePoint(s.t, s.diag_mass, s.residual) for s in report.steps]
    notes = []
    if any(s.reduced for s in report.steps):
        notes.append("moment-preserving atom reduction was applied")
    if mode == "particle":
        notes.append(f"particle mode with {n_particles} particles, seed {seed}")
    return _verdict("higher_level", mu, moment_measure(rho, 2), trace, converged, tol, notes)


def endogeny_both(spec: RdeSpec, mu: Measure, t_max: int = T_MAX, tol: float = TOL,
                  eps: float = NORM_TOL, trace_tol: float = 1e-10) -> tuple[EndogenyVerdict, EndogenyVerdict, EndogenyVerdict]:
    """Run both routes (exact mode) and check that they agree.

    Returns (combined, bivariate, higher-level).  The combined verdict has
    route "both"; a disagreement in status or in the diagonal-mass traces
    makes it Inconclusive with a note.
    """
    bv = endogeny_bivariate(spec, mu, t_max, tol)
    hl = endogeny_higherlevel(spec, mu, "exact", t_max, tol, eps)
    notes = []
    n = min(len(bv.trace), len(hl.trace))
    drift = max((abs(a.diag_mass - b.diag_mass) for a, b in zip(bv.trace[:n], hl.trace[:n])), default=0.0)
    status = bv.status
    if bv.status != hl.status:
        notes.append(f"routes disagree: bivariate {bv.status}, higher-level {hl.status}")
        status = INCONCLUSIVE
    if drift > trace_tol:
        notes.append(f"diagonal-mass traces differ by {drift:.3e}")
        status = INCONCLUSIVE
    combined = EndogenyVerdict(status, "both", bv.diag_mass, bv.tv_gap, bv.iterations, bv.witness,
                               bv.converged, bv.residual, bv.tail_bound, bv.trace, notes + bv.notes)
    return combined, bv, hl


def route_traces(spec: RdeSpec, mu: Measure, steps: int, eps: float = NORM_TOL,
                 reduce_above: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal masses at t = 0..steps along both routes, without stopping
    early.  mu need not be a fixed point; the identity between the routes
    holds for any starting mu."""
    nu = product([mu, mu])
    rho = SimplexAtomMeasure.dirac(mu)
    bv, hl = [], []
    for t in range(steps + 1):
        bv.append(diagonal_mass(nu))
        hl.append(diagonal_mass(moment_measure(rho, 2)))
        if t == steps:
            break
        nu = apply_Tn(spec, nu, 2)
        if candidate_count(spec, rho.n_atoms) > reduce_above:
            rho = reduce_second_moment(rho)
        rho = apply_check_T_exact(spec, rho, eps)
    return np.array(bv), np.array(hl)


def sinkhorn(M: np.ndarray, r: np.ndarray, c: np.ndarray, iters: int = 10000, tol: float = 1e-12) -> np.ndarray:
    """Scale a nonnegative matrix to row sums r and column sums c."""
    M = np.array(M, dtype=float)
    for _ in range(iters):
        rs = M.sum(axis=1)
        M *= np.divide(r, rs, out=np.zeros_like(r), where=rs > 0)[:, None]
        cs = M.sum(axis=0)
        M *= np.divide(c, cs, out=np.zeros_like(c), where=cs > 0)[None, :]
        if max(np.abs(M.sum(axis=1) - r).max(), np.abs(M.sum(axis=0) - c).max()) <= tol:
            break
    return M


def random_coupling(mu: Measure, rng: np.random.Generator, symmetric: bool = True) -> TensorMeasure:
    """Random law on S x S with both marginals mu.

    A random nonnegative matrix on supp(mu)^2 is Sinkhorn-scaled (and
    symmetrised if asked), then mixed with the diagonal and independent
    couplings at Dirichlet weights.
    """
    w = np.asarray(mu.weights)
    supp = w > 0
    M = rng.random((len(w), len(w))) * np.outer(supp, supp)
    if symmetric:
        M = M + M.T
    M = sinkhorn(M, w, w)
    if symmetric:
        M = 0.5 * (M + M.T)
    a = rng.dirichlet(np.ones(3))
    mix = a[0] * M + a[1] * np.diag(w) + a[2] * np.outer(w, w)
    return TensorMeasure(mu.space, 2, mix.reshape(-1))


@dataclass
class ScanResult:
    fixed_points: list[TensorMeasure]
    counts: list[int]
    n_starts: int
    not_converged: list[int]
    residuals: list[float]

    @property
    def unique(self) -> bool:
        return len(self.fixed_points) == 1

    def to_json(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "fixed_points": [
                {"nu": f.to_json(), "diag_mass": diagonal_mass(f), "count": c}
                for f, c in zip(self.fixed_points, self.counts)
            ],
            "not_converged": self.not_converged,
            "residuals": self.residuals,
        }


def bivariate_uniqueness_scan(spec: RdeSpec, mu: Measure, n_starts: int = N_STARTS, t_max: int = T_MAX,
                              tol: float = TOL, seed: int = 0, threads: int | None = None) -> ScanResult:
    """Iterate T^(2) from many symmetric couplings with marginals mu and
    cluster the limits.  Start 0 is mu x mu and start 1 the diagonal."""
    require_fixed_point(spec, mu, tol)
    rng = np.random.default_rng(seed)
    starts = [product([mu, mu]), diag_measure(mu, 2)]
    starts += [random_coupling(mu, rng) for _ in range(max(n_starts - 2, 0))]

    def run(nu):
        return iterate_bivariate(spec, nu, t_max, tol)

    n_threads = thread_count(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(nu) for nu in starts]

    limits, not_converged, residuals = [], [], []
    for i, (nu, trace, ok) in enumerate(results):
        residuals.append(trace[-1].residual)
        if ok:
            limits.append(nu)
        else:
            not_converged.append(i)
    reps, counts = [], []
    for nu in limits:
        for k, rep in enumerate(reps):
            if tv_distance(nu, rep) <= BAND * tol:
                counts[k] += 1
                break
        else:
            reps.append(nu)
            counts.append(1)
    order = sorted(range(len(reps)), key=lambda k: (-diagonal_mass(reps[k]), tuple(reps[k].entries)))
    return ScanResult([reps[k] for k in order], [counts[k] for k in order], len(starts),
                      not_converged, residuals)
