"""Monte Carlo on truncated recursive tree processes.

A tree of depth t carries a noise index at every word of length < t; the
children of word i are i1..ik with k the arity of its noise.  Words of
length t are leaves and receive boundary states.

All randomness is counter based.  Node words are numbered in d-ary heap
order (d = max arity): the root is 0 and child j (1-based) of node n is
n*d + j.  The noise at node n of sample s is drawn from
``uniforms(seed, s, n, 0)`` and boundary copy c (1 or 2) at a leaf from
``uniforms(seed, s, n, c)``.  The per-tree API and the batch engines below
therefore see exactly the same draws.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .counter_rng import categorical, thread_count, uniforms
from .higher_level import check_g_batch
from .measure_core import Measure, TensorMeasure
from .rde_model import BudgetExceeded, RdeSpec, apply_g, require_fixed_point

NODE_BUDGET = 10**7
CHUNK_NODES = 2 * 10**6
OMEGA_STREAM = 0


def _degree(spec: RdeSpec) -> int:
    return max(spec.kappa_max, 1)


def heap_index(word: tuple[int, ...], d: int) -> int:
    n = 0
    for j in word:
        n = n * d + j
    return n


def expected_nodes(spec: RdeSpec, depth: int) -> float:
    """Expected number of nodes, leaves included, of a depth-``depth`` tree."""
    m = float(spec.probs @ np.array([a.arity for a in spec.noise]))
    return float(sum(m**level for level in range(depth + 1)))


def _check_budget(spec: RdeSpec, depth: int, budget: int) -> float:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    e = expected_nodes(spec, depth)
    if e > budget:
        raise BudgetExceeded(f"expected {e:.3g} nodes at depth {depth} exceed the node budget {budget}; "
                             "lower the depth (it is never capped automatically)")
    return e


@dataclass
class SampledTree:
    spec: RdeSpec
    depth: int
    seed: int
    sample: int
    nodes: dict[tuple[int, ...], int]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[tuple[int, ...]]:
        """Words of length ``depth`` hanging below the recorded nodes."""
        out = []
        for w, om in self.nodes.items():
            if len(w) == self.depth - 1:
                out += [w + (j,) for j in range(1, self.spec.noise[om].arity + 1)]
        return out

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "seed": self.seed,
            "sample": self.sample,
            "nodes": [
                {"word": list(w), "omega": om, "name": self.spec.noise[om].name}
                for w, om in sorted(self.nodes.items(), key=lambda kv: (len(kv[0]), kv[0]))
            ],
        }

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def sample_tree(spec: RdeSpec, depth: int, seed: int, sample: int = 0,
                node_budget: int = NODE_BUDGET) -> SampledTree:
    _check_budget(spec, depth, node_budget)
    d = _degree(spec)
    nodes: dict[tuple[int, ...], int] = {}
    level = [()]
    for _ in range(depth):
        if not level:
            break
        idx = np.array([heap_index(w, d) for w in level], dtype=np.uint64)
        omegas = categorical(uniforms(seed, sample, idx, OMEGA_STREAM), spec.probs)
        nxt = []
        for w, om in zip(level, omegas):
            nodes[w] = int(om)
            nxt += [w + (j,) for j in range(1, spec.noise[om].arity + 1)]
        if len(nodes) + len(nxt) > node_budget:
            raise BudgetExceeded(f"tree exceeds the node budget {node_budget}")
        level = nxt
    return SampledTree(spec, depth, seed, sample, nodes)


def _boundary_states(tree: SampledTree, leaves, boundary: Measure, rng, copy: int) -> dict:
    if not leaves:
        return {}
    if rng is None:
        d = _degree(tree.spec)
        idx = np.array([heap_index(w, d) for w in leaves], dtype=np.uint64)
        u = uniforms(tree.seed, tree.sample, idx, copy)
        states = categorical(u, np.asarray(boundary.weights))
    else:
        states = rng.choice(boundary.space.size, size=len(leaves), p=np.asarray(boundary.weights))
    return dict(zip(leaves, (int(s) for s in states)))


def evaluate_root(tree: SampledTree, boundary: Measure, rng: np.random.Generator | None = None,
                  copy: int = 1) -> int:
    """State at the root after drawing i.i.d. boundary states at the leaves
    and applying the maps bottom-up.

    With ``rng=None`` the boundary comes from the counter stream ``copy``,
    matching the batch engines.
    """
    spec = tree.spec
    values = _boundary_states(tree, tree.leaves(), boundary, rng, copy)
    for w in sorted(tree.nodes, key=len, reverse=True):
        om = tree.nodes[w]
        args = [values[w + (j,)] for j in range(1, spec.noise[om].arity + 1)]
        values[w] = apply_g(spec, om, args)
    return values[()]


def xi_root(tree: SampledTree, mu: Measure) -> Measure:
    """Conditional law of the root state given the noise on this tree, when
    the leaves are i.i.d. mu."""
    spec = tree.spec
    values = {w: np.asarray(mu.weights, dtype=float) for w in tree.leaves()}
    for w in sorted(tree.nodes, key=len, reverse=True):
        om = tree.nodes[w]
        args = [values[w + (j,)][None, :] for j in range(1, spec.noise[om].arity + 1)]
        values[w] = check_g_batch(spec, om, args)[0]
    return Measure(mu.space, values[()])


# ---------------------------------------------------------------- batch engines

def _grow(spec: RdeSpec, seed: int, samples: np.ndarray, depth: int):
    """Top-down generation for a block of samples.

    Returns per level l < depth the arrays (sample, heap, omega, first child
    position in level l+1) and the (sample, heap) arrays of the leaves.
    """
    d = np.uint64(_degree(spec))
    arity = np.array([a.arity for a in spec.noise], dtype=np.int64)
    smp = samples.astype(np.uint64)
    heap = np.zeros(len(samples), dtype=np.uint64)
    levels = []
    for _ in range(depth):
        om = categorical(uniforms(seed, smp, heap, OMEGA_STREAM), spec.probs)
        k = arity[om]
        first = np.concatenate([[0], np.cumsum(k)[:-1]]).astype(np.int64)
        levels.append((smp, heap, om, first))
        parent = np.repeat(np.arange(len(om)), k)
        j = np.arange(len(parent)) - first[parent] + 1
        smp, heap = smp[parent], heap[parent] * d + j.astype(np.uint64)
    return levels, (smp, heap)


def _reduce_states(spec: RdeSpec, levels, leaf_values: np.ndarray) -> np.ndarray:
    n = spec.space.size
    vals = leaf_values
    for smp, heap, om, first in reversed(levels):
        out = np.empty(len(om), dtype=np.int64)
        for i, atom in enumerate(spec.noise):
            sel = np.flatnonzero(om == i)
            if len(sel) == 0:
                continue
            idx = np.zeros(len(sel), dtype=np.int64)
            for j in range(atom.arity):
                idx = idx * n + vals[first[sel] + j]
            out[sel] = np.asarray(atom.table)[idx]
        vals = out
    return vals


def _reduce_laws(spec: RdeSpec, levels, leaf_laws: np.ndarray) -> np.ndarray:
    vals = leaf_laws
    for smp, heap, om, first in reversed(levels):
        out = np.empty((len(om), spec.space.size))
        for i, atom in enumerate(spec.noise):
            sel = np.flatnonzero(om == i)
            if len(sel) == 0:
                continue
            args = [vals[first[sel] + j] for j in range(atom.arity)]
            out[sel] = check_g_batch(spec, i, args) if atom.arity else check_g_batch(spec, i, [])[0]
        vals = out
    return vals


def _chunks(spec: RdeSpec, depth: int, n_samples: int) -> list[tuple[int, int]]:
    size = int(max(1, min(8192, CHUNK_NODES // max(expected_nodes(spec, depth), 1.0))))
    return [(lo, min(lo + size, n_samples)) for lo in range(0, n_samples, size)]


def _map_chunks(fn, bounds, threads):
    n_threads = thread_count(threads)
    if n_threads == 1 or len(bounds) == 1:
        return [fn(b) for b in bounds]
    with ThreadPoolExecutor(n_threads) as ex:
        return list(ex.map(fn, bounds))


def root_states(spec: RdeSpec, boundary: Measure, depth: int, n_samples: int, seed: int,
                copies: tuple[int, ...] = (1,), threads: int | None = None,
                node_budget: int = NODE_BUDGET) -> np.ndarray:
    """Root states, shape (len(copies), n_samples).  All copies share the
    tree of each sample; copy c uses boundary stream c."""
    _check_budget(spec, depth, node_budget)
    w = np.asarray(boundary.weights)

    def run(b):
        lo, hi = b
        levels, (smp, heap) = _grow(spec, seed, np.arange(lo, hi), depth)
        return np.stack([_reduce_states(spec, levels, categorical(uniforms(seed, smp, heap, c), w))
                         for c in copies])

    return np.concatenate(_map_chunks(run, _chunks(spec, depth, n_samples), threads), axis=1)


def xi_samples(spec: RdeSpec, mu: Measure, depth: int, n_samples: int, seed: int,
               threads: int | None = None, node_budget: int = NODE_BUDGET) -> np.ndarray:
    """xi at the root for n_samples trees, shape (n_samples, |S|)."""
    _check_budget(spec, depth, node_budget)
    w = np.asarray(mu.weights, dtype=float)

    def run(b):
        lo, hi = b
        levels, (smp, _) = _grow(spec, seed, np.arange(lo, hi), depth)
        return _reduce_laws(spec, levels, np.tile(w, (len(smp), 1)))

    return np.concatenate(_map_chunks(run, _chunks(spec, depth, n_samples), threads))


@dataclass
class McEstimate:
    value: float
    n_samples: int
    std_error: float
    seed: int

    def to_json(self) -> dict:
        return {"value": self.value, "n_samples": self.n_samples, "std_error": self.std_error, "seed": self.seed}


def _proportion(hits: int, n: int, seed: int) -> McEstimate:
    v = hits / n
    return McEstimate(v, n, float(np.sqrt(v * (1.0 - v) / n)), seed)


def coupled_agreement(spec: RdeSpec, mu: Measure, depth: int, n_samples: int, seed: int,
                      threads: int | None = None, tol: float = 1e-10) -> McEstimate:
    """Estimate P[X = Y] for two root evaluations sharing every noise
    variable but with independent mu-distributed boundaries."""
    require_fixed_point(spec, mu, tol)
    x, y = root_states(spec, mu, depth, n_samples, seed, (1, 2), threads)
    return _proportion(int(np.count_nonzero(x == y)), n_samples, seed)


@dataclass
class RootLawEstimate:
    law: Measure
    counts: np.ndarray
    n_samples: int
    seed: int

    @property
    def std_errors(self) -> np.ndarray:
        p = np.asarray(self.law.weights)
        return np.sqrt(p * (1.0 - p) / self.n_samples)

    def to_json(self) -> dict:
        return {"law": self.law.weights.tolist(), "counts": self.counts.tolist(),
                "std_errors": self.std_errors.tolist(), "n_samples": self.n_samples, "seed": self.seed}


def root_law_estimate(spec: RdeSpec, mu: Measure, depth: int, n_samples: int, seed: int,
                      threads: int | None = None) -> RootLawEstimate:
    x = root_states(spec, mu, depth, n_samples, seed, (1,), threads)[0]
    counts = np.bincount(x, minlength=spec.space.size)
    return RootLawEstimate(Measure(mu.space, counts / n_samples), counts, n_samples, seed)


def clt_tv_bound(p, n: int) -> float:
    """One-sigma scale of the tv distance between an n-sample empirical law
    and its true law p (half the sum of per-state standard errors)."""
    p = np.asarray(p, dtype=float)
    return float(0.5 * np.sqrt(p * (1.0 - p) / n).sum())


def xi_second_moment(samples: np.ndarray, space) -> tuple[TensorMeasure, np.ndarray]:
    """Empirical second moment measure of xi samples and the per-entry
    standard errors of that estimate."""
    prods = np.einsum("ai,aj->aij", samples, samples).reshape(len(samples), -1)
    return TensorMeasure(space, 2, prods.mean(axis=0)), prods.std(axis=0) / np.sqrt(len(samples))
