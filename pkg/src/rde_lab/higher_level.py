"""The higher-level map on laws of random measures, P(P(S)) -> P(P(S)).

Exact mode propagates atoms: every noise atom and every tuple of input atoms
produces one output atom at the pushforward g-check(points).  Particle mode
is the population-dynamics approximation of the same map.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .counter_rng import categorical, thread_count, uniforms
from .measure_core import (
    NORM_TOL,
    Measure,
    SimplexAtomMeasure,
    TensorMeasure,
    diagonal_mass,
    merge_atoms,
    moment_measure,
    tv_distance,
)
from .rde_model import BudgetExceeded, RdeSpec, require_fixed_point

ATOM_BUDGET = 10**5
REDUCE_ABOVE = 4096
PARTICLE_CHUNK = 4096


class AtomBudgetExceeded(BudgetExceeded):
    """Exact propagation would produce too many atoms; use particle mode or
    the moment-preserving reduction."""


def mu_bar(mu: Measure) -> SimplexAtomMeasure:
    """Law of delta_X for X ~ mu."""
    support = np.flatnonzero(mu.weights > 0)
    return SimplexAtomMeasure(mu.space, mu.weights[support], np.eye(mu.space.size)[support])


@lru_cache(maxsize=256)
def _table_matrix(table: tuple[int, ...], n_states: int) -> np.ndarray:
    m = np.zeros((len(table), n_states))
    m[np.arange(len(table)), table] = 1.0
    m.setflags(write=False)
    return m


def check_g_batch(spec: RdeSpec, omega: int, args: list[np.ndarray]) -> np.ndarray:
    """Row-wise g-check: ``args[j]`` has shape (m, |S|); returns (m, |S|)."""
    atom = spec.noise[omega]
    n = spec.space.size
    if atom.arity == 0:
        m = 1 if not args else len(args[0])
        out = np.zeros((m, n))
        out[:, atom.table[0]] = 1.0
        return out
    joint = args[0]
    for a in args[1:]:
        joint = np.einsum("mi,mj->mij", joint, a).reshape(len(joint), -1)
    return joint @ _table_matrix(atom.table, n)


def candidate_count(spec: RdeSpec, n_atoms: int) -> int:
    return sum(n_atoms**a.arity for a in spec.noise)


def apply_check_T_exact(spec: RdeSpec, rho: SimplexAtomMeasure, eps: float = NORM_TOL,
                        atom_budget: int = ATOM_BUDGET) -> SimplexAtomMeasure:
    n_atoms = rho.n_atoms
    total = candidate_count(spec, n_atoms)
    if total > atom_budget:
        raise AtomBudgetExceeded(
            f"{total} candidate atoms exceed the budget of {atom_budget}; "
            "switch to particle mode or enable moment-preserving reduction")
    weights, points = [], []
    for i, atom in enumerate(spec.noise):
        k = atom.arity
        if k == 0:
            weights.append(np.array([atom.prob]))
            points.append(check_g_batch(spec, i, []))
            continue
        tuples = np.indices((n_atoms,) * k).reshape(k, -1)
        w = np.full(tuples.shape[1], atom.prob)
        for j in range(k):
            w = w * rho.weights[tuples[j]]
        weights.append(w)
        points.append(check_g_batch(spec, i, [rho.points[tuples[j]] for j in range(k)]))
    out = merge_atoms(rho.space, np.concatenate(weights), np.concatenate(points), eps)
    if out.n_atoms > atom_budget:
        raise AtomBudgetExceeded(f"{out.n_atoms} atoms after merging exceed {atom_budget}")
    return out


def _quadratic_features(points: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(points.shape[1])
    return np.einsum("ai,aj->aij", points, points)[:, iu[0], iu[1]]


def _caratheodory(features: np.ndarray, weights: np.ndarray, target: int) -> np.ndarray:
    """Nonnegative weights with the same weighted feature sum and at most
    ``target`` nonzeros.  Each round takes target + 1 live atoms, finds a
    null vector of their (features, 1) columns and moves along it until one
    weight hits zero."""
    w = weights.astype(float).copy()
    alive = np.flatnonzero(w > 0)
    while len(alive) > target:
        sub = alive[:target + 1]
        f = np.vstack([features[sub].T, np.ones(len(sub))])
        v = np.linalg.svd(f)[2][-1]
        if v.max() <= 0:
            v = -v
        pos = v > 0
        ratios = np.full(len(v), np.inf)
        ratios[pos] = w[sub][pos] / v[pos]
        drop = int(np.argmin(ratios))
        w[sub] = np.maximum(w[sub] - ratios[drop] * v, 0.0)
        w[sub[drop]] = 0.0
        alive = np.flatnonzero(w > 0)
    return w


def reduce_second_moment(rho: SimplexAtomMeasure) -> SimplexAtomMeasure:
    """A sub-measure of ``rho``'s atoms, reweighted, with the same first and
    second moment measures and at most |S|(|S|+1)/2 atoms.

    Groups of atoms are collapsed to their barycentres in feature space, the
    group barycentres are reduced by Caratheodory, and surviving groups are
    rescaled; this repeats until few enough atoms remain.
    """
    feats = _quadratic_features(np.asarray(rho.points))
    dim = feats.shape[1]
    w = np.array(rho.weights, dtype=float)
    alive = np.flatnonzero(w > 0)
    while len(alive) > dim:
        groups = np.array_split(alive, min(2 * dim, len(alive)))
        gw = np.array([w[g].sum() for g in groups])
        # normalise inside each group first: group weights can be subnormal
        gf = np.array([(w[g] / s) @ feats[g] for g, s in zip(groups, gw)])
        new = _caratheodory(gf, gw, dim)
        for g, old, nw in zip(groups, gw, new):
            w[g] = (w[g] / old) * nw
        alive = np.flatnonzero(w > 0)
    return SimplexAtomMeasure(rho.space, w[alive], np.asarray(rho.points)[alive])


def _particle_chunk(spec: RdeSpec, particles: np.ndarray, seed: int, step: int,
                    lo: int, hi: int) -> np.ndarray:
    n_part = len(particles)
    idx = np.arange(lo, hi, dtype=np.uint64)
    omegas = categorical(uniforms(seed, step, idx, 0), spec.probs)
    out = np.empty((hi - lo, spec.space.size))
    for i, atom in enumerate(spec.noise):
        sel = np.flatnonzero(omegas == i)
        if len(sel) == 0:
            continue
        parents = [
            particles[np.minimum((uniforms(seed, step, idx[sel], j + 1) * n_part).astype(np.int64),
                                 n_part - 1)]
            for j in range(atom.arity)
        ]
        out[sel] = check_g_batch(spec, i, parents) if atom.arity else check_g_batch(spec, i, [])[0]
    return out


def apply_check_T_particle(spec: RdeSpec, particles: np.ndarray, seed: int, step: int = 0,
                           threads: int | None = None) -> np.ndarray:
    """One population-dynamics step.

    Output particle i draws its noise atom and its parents (uniformly, with
    replacement) from counter-based uniforms keyed by (seed, step, i), so the
    result does not depend on the thread count.
    """
    particles = np.asarray(particles, dtype=float)
    n_part = len(particles)
    if n_part < 1:
        raise ValueError("need at least one particle")
    bounds = [(lo, min(lo + PARTICLE_CHUNK, n_part)) for lo in range(0, n_part, PARTICLE_CHUNK)]
    n_threads = thread_count(threads)
    if n_threads == 1 or len(bounds) == 1:
        parts = [_particle_chunk(spec, particles, seed, step, lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(n_threads) as ex:
            parts = list(ex.map(lambda b: _particle_chunk(spec, particles, seed, step, *b), bounds))
    return np.concatenate(parts)


def particle_moment(particles: np.ndarray, n: int, space) -> TensorMeasure:
    """n-th moment measure of the empirical law of the particles."""
    p = np.asarray(particles)
    acc = p
    for _ in range(n - 1):
        acc = np.einsum("ai,aj->aij", acc, p).reshape(len(p), -1)
    return TensorMeasure(space, n, acc.mean(axis=0))


def particles_to_atoms(space, particles: np.ndarray, eps: float = NORM_TOL) -> SimplexAtomMeasure:
    p = np.asarray(particles)
    return merge_atoms(space, np.full(len(p), 1.0 / len(p)), p, eps)


@dataclass
class HigherStep:
    t: int
    atom_count: int
    diag_mass: float
    residual: float
    reduced: bool = False
    snapshot: SimplexAtomMeasure | None = None


@dataclass
class HigherIterationReport:
    mode: str
    steps: list[HigherStep] = field(default_factory=list)
    converged: bool = False

    @property
    def diag_masses(self) -> list[float]:
        return [s.diag_mass for s in self.steps]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "converged": self.converged,
            "steps": [
                {"t": s.t, "atom_count": s.atom_count, "diag_mass": s.diag_mass,
                 "residual": s.residual, "reduced": s.reduced}
                for s in self.steps
            ],
        }

    def to_csv(self) -> str:
        rows = ["t,atom_count,diag_mass,residual"]
        rows += [f"{s.t},{s.atom_count},{float(s.diag_mass)!r},{float(s.residual)!r}" for s in self.steps]
        return "\n".join(rows) + "\n"


def iterate_check_T(spec: RdeSpec, mu: Measure, t_max: int | None = None, tol: float = 1e-10,
                    mode: str = "exact", eps: float = NORM_TOL, n_particles: int = 10**4,
                    seed: int = 0, reduce: bool = False, reduce_above: int = REDUCE_ABOVE,
                    atom_budget: int = ATOM_BUDGET, snapshots: bool = False,
                    threads: int | None = None):
    """Iterate the higher-level map from delta_mu towards the minimal solution.

    Convergence is declared when successive second moment measures are within
    ``tol`` in total variation.  Returns (newest iterate, report, converged):
    the image of the last traced step, which is already computed.

    With ``reduce=True`` (exact mode only), whenever the next step would
    generate more than ``reduce_above`` candidate atoms the current iterate
    is replaced by :func:`reduce_second_moment`.  This keeps all first and
    second moment measures exact but not the law itself.
    """
    if mode not in ("exact", "particle"):
        raise ValueError(f"unknown mode {mode!r}")
    if t_max is None:
        t_max = 500 if mode == "exact" else 200
    require_fixed_point(spec, mu, tol)
    report = HigherIterationReport(mode)

    if mode == "exact":
        rho = SimplexAtomMeasure.dirac(mu)
        m2 = moment_measure(rho, 2)
        for t in range(t_max + 1):
            reduced = False
            if reduce and candidate_count(spec, rho.n_atoms) > reduce_above:
                rho = reduce_second_moment(rho)
                reduced = True
            nxt = apply_check_T_exact(spec, rho, eps, atom_budget)
            m2_next = moment_measure(nxt, 2)
            r = tv_distance(m2_next, m2)
            report.steps.append(HigherStep(t, rho.n_atoms, diagonal_mass(m2), r, reduced,
                                           rho if snapshots else None))
            if r <= tol:
                report.converged = True
                return nxt, report, True
            if t == t_max:
                break
            rho, m2 = nxt, m2_next
        return nxt, report, False

    particles = np.tile(mu.weights, (n_particles, 1))
    m2 = particle_moment(particles, 2, mu.space)
    for t in range(t_max + 1):
        nxt = apply_check_T_particle(spec, particles, seed, t, threads)
        m2_next = particle_moment(nxt, 2, mu.space)
        r = tv_distance(m2_next, m2)
        snap = particles_to_atoms(mu.space, particles, eps) if snapshots else None
        report.steps.append(HigherStep(t, n_particles, diagonal_mass(m2), r, False, snap))
        if r <= tol:
            report.converged = True
            return particles_to_atoms(mu.space, nxt, eps), report, True
        if t == t_max:
            break
        particles, m2 = nxt, m2_next
    return particles_to_atoms(mu.space, nxt, eps), report, False
