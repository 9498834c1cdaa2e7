"""Probability measures on a finite state space S, joint laws on S^n and
finitely-atomic laws on the simplex P(S).

All tensors use a big-endian flat layout: the entry for (s_1, ..., s_n) lives
at index sum_j s_j * |S|**(n - j), so coordinate 1 is the most significant.
Coordinates passed to :func:`marginal` are 1-based.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

NORM_TOL = 1e-12
MAX_ORDER = 3


class MeasureError(ValueError):
    """Invalid measure data (negative weights, bad normalization, shape mismatch)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) < 1:
            raise MeasureError("state space must have at least one state")
        if len(set(labels)) != len(labels):
            raise MeasureError(f"state labels must be distinct: {labels}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of_size(cls, n: int) -> "StateSpace":
        return cls(tuple(str(i) for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


def _normalized(weights, total_tol: float, what: str) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)):
        raise MeasureError(f"{what}: non-finite weights")
    if np.any(w < 0):
        raise MeasureError(f"{what}: negative weight {w.min()!r}")
    s = w.sum()
    if abs(s - 1.0) > total_tol:
        raise MeasureError(f"{what}: weights sum to {s!r}, expected 1")
    return w / s


@dataclass(frozen=True, eq=False)
class Measure:
    """A probability vector on ``space``."""

    space: StateSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape != (self.space.size,):
            raise MeasureError(f"measure needs {self.space.size} weights, got {w.shape[0]}")
        object.__setattr__(self, "weights", _frozen(_normalized(w, NORM_TOL, "measure")))

    @classmethod
    def of(cls, weights: Sequence[float], space: StateSpace | None = None) -> "Measure":
        weights = list(weights)
        return cls(space or StateSpace.of_size(len(weights)), np.asarray(weights, dtype=float))

    @classmethod
    def point(cls, space: StateSpace, x: int) -> "Measure":
        w = np.zeros(space.size)
        w[x] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: StateSpace) -> "Measure":
        return cls(space, np.full(space.size, 1.0 / space.size))

    def __getitem__(self, x: int) -> float:
        return float(self.weights[x])

    def __repr__(self) -> str:
        return f"Measure({np.array2string(self.weights, precision=6)})"

    def to_tensor(self) -> "TensorMeasure":
        return TensorMeasure(self.space, 1, self.weights)

    def to_json(self) -> dict:
        return {"states": list(self.space.labels), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class TensorMeasure:
    """Dense joint law on S^order, stored flat in big-endian layout."""

    space: StateSpace
    order: int
    entries: np.ndarray

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise MeasureError(f"tensor order must be in 1..{MAX_ORDER}, got {self.order}")
        size = self.space.size ** self.order
        e = np.asarray(self.entries, dtype=float).reshape(-1)
        if e.shape != (size,):
            raise MeasureError(f"order-{self.order} tensor needs {size} entries, got {e.shape[0]}")
        object.__setattr__(self, "entries", _frozen(_normalized(e, NORM_TOL * size, "tensor")))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.space.size,) * self.order

    def array(self) -> np.ndarray:
        """Entries as an n-dimensional array indexed by (s_1, ..., s_n)."""
        return self.entries.reshape(self.shape)

    def __getitem__(self, coords: tuple[int, ...]) -> float:
        return float(self.array()[tuple(coords)])

    def as_measure(self) -> Measure:
        if self.order != 1:
            raise MeasureError("only order-1 tensors convert to Measure")
        return Measure(self.space, self.entries)

    def __repr__(self) -> str:
        return f"TensorMeasure(order={self.order}, entries={np.array2string(self.entries, precision=6)})"

    def to_json(self) -> dict:
        return {
            "states": list(self.space.labels),
            "shape": list(self.shape),
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TensorMeasure":
        space = StateSpace(tuple(data["states"]))
        shape = data["shape"]
        if any(s != space.size for s in shape):
            raise MeasureError(f"shape {shape} does not match {space.size} states")
        return cls(space, len(shape), np.asarray(data["entries"], dtype=float))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"s{j + 1}" for j in range(self.order)] + ["value"])
        for idx in itertools.product(range(self.space.size), repeat=self.order):
            w.writerow(list(idx) + [repr(float(self.array()[idx]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, space: StateSpace) -> "TensorMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        order = len(header) - 1
        arr = np.zeros((space.size,) * order)
        for row in body:
            arr[tuple(int(c) for c in row[:-1])] = float(row[-1])
        return cls(space, order, arr.reshape(-1))


@dataclass(frozen=True, eq=False)
class SimplexAtomMeasure:
    """Finitely-atomic law on P(S): ``weights[a]`` on the point ``points[a]``."""

    space: StateSpace
    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        p = np.asarray(self.points, dtype=float).reshape(len(w), self.space.size)
        if len(w) == 0:
            raise MeasureError("atomic measure needs at least one atom")
        w = _normalized(w, NORM_TOL, "atom weights")
        if np.any(p < 0):
            raise MeasureError("atom points must be nonnegative")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > NORM_TOL):
            raise MeasureError("atom points must be probability vectors")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "points", _frozen(p / sums[:, None]))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, Measure]]) -> "SimplexAtomMeasure":
        atoms = list(atoms)
        space = atoms[0][1].space
        if any(m.space != space for _, m in atoms):
            raise MeasureError("atoms live on different state spaces")
        return cls(space, np.array([w for w, _ in atoms]), np.array([m.weights for _, m in atoms]))

    @classmethod
    def dirac(cls, mu: Measure) -> "SimplexAtomMeasure":
        """The point mass delta_mu."""
        return cls(mu.space, np.ones(1), mu.weights[None, :])

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def atoms(self) -> list[tuple[float, Measure]]:
        return [(float(w), Measure(self.space, p)) for w, p in zip(self.weights, self.points)]

    def __repr__(self) -> str:
        return f"SimplexAtomMeasure({self.n_atoms} atoms)"

    def to_json(self) -> dict:
        return {
            "states": list(self.space.labels),
            "atoms": [{"weight": float(w), "point": p.tolist()} for w, p in zip(self.weights, self.points)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SimplexAtomMeasure":
        space = StateSpace(tuple(data["states"]))
        atoms = data["atoms"]
        if not atoms:
            raise MeasureError("atoms: empty list")
        return cls(space, np.array([a["weight"] for a in atoms], dtype=float),
                   np.array([a["point"] for a in atoms], dtype=float))


def _check_space(items) -> StateSpace:
    spaces = {x.space for x in items}
    if len(spaces) != 1:
        raise MeasureError("mixed state spaces")
    return spaces.pop()


def _outer_flat(vectors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for v in vectors:
        out = np.multiply.outer(out, v).reshape(-1)
    return out


def product(factors: Sequence[Measure]) -> TensorMeasure:
    """Product measure mu_1 x ... x mu_n (n <= 3)."""
    if not 1 <= len(factors) <= MAX_ORDER:
        raise MeasureError(f"product needs 1..{MAX_ORDER} factors, got {len(factors)}")
    space = _check_space(factors)
    return TensorMeasure(space, len(factors), _outer_flat([f.weights for f in factors]))


def marginal(nu: TensorMeasure, coords: Sequence[int]) -> TensorMeasure:
    """Image of ``nu`` under (x_1..x_n) -> (x_{i_1}..x_{i_m}); coords are 1-based."""
    coords = list(coords)
    if not coords or len(set(coords)) != len(coords):
        raise MeasureError(f"coords must be distinct and nonempty: {coords}")
    if any(not 1 <= c <= nu.order for c in coords):
        raise MeasureError(f"coordinate out of range 1..{nu.order}: {coords}")
    axes = [c - 1 for c in coords]
    other = tuple(a for a in range(nu.order) if a not in axes)
    arr = nu.array().sum(axis=other) if other else nu.array()
    # remaining axes are in increasing order; permute them into the requested order
    kept = sorted(axes)
    arr = np.transpose(arr, [kept.index(a) for a in axes])
    return TensorMeasure(nu.space, len(coords), arr.reshape(-1))


def diag_measure(mu: Measure, n: int) -> TensorMeasure:
    """Law of (X, ..., X) with X ~ mu."""
    if not 1 <= n <= MAX_ORDER:
        raise MeasureError(f"diagonal order must be in 1..{MAX_ORDER}")
    k = mu.space.size
    e = np.zeros(k ** n)
    stride = sum(k ** j for j in range(n))
    e[np.arange(k) * stride] = mu.weights
    return TensorMeasure(mu.space, n, e)


def moment_measure(rho: SimplexAtomMeasure, n: int) -> TensorMeasure:
    """n-th moment measure: sum over atoms of weight * point^{(x) n}."""
    if not 1 <= n <= MAX_ORDER:
        raise MeasureError(f"moment order must be in 1..{MAX_ORDER}")
    p = rho.points
    acc = p
    for _ in range(n - 1):
        acc = np.einsum("ai,aj->aij", acc, p).reshape(len(p), -1)
    return TensorMeasure(rho.space, n, rho.weights @ acc)


def first_moment(rho: SimplexAtomMeasure) -> Measure:
    return Measure(rho.space, rho.weights @ rho.points)


def second_moment_matrix(rho: SimplexAtomMeasure) -> np.ndarray:
    """|S| x |S| matrix of the second moment measure."""
    return np.einsum("a,ai,aj->ij", rho.weights, rho.points, rho.points)


def diagonal_mass(nu: TensorMeasure) -> float:
    """sum_x nu(x, x); equals 1 exactly for a diagonal coupling."""
    if nu.order != 2:
        raise MeasureError(f"diagonal_mass needs an order-2 tensor, got order {nu.order}")
    return float(np.trace(nu.array()))


def tv_distance(a, b) -> float:
    if isinstance(a, Measure) and isinstance(b, Measure):
        x, y = a.weights, b.weights
    elif isinstance(a, TensorMeasure) and isinstance(b, TensorMeasure):
        if a.order != b.order:
            raise MeasureError("tv_distance: tensor orders differ")
        x, y = a.entries, b.entries
    else:
        raise MeasureError("tv_distance: arguments must both be Measure or both TensorMeasure")
    if a.space.size != b.space.size:
        raise MeasureError("tv_distance: state spaces differ")
    return float(0.5 * np.abs(x - y).sum())


def _merge_groups(points: np.ndarray, eps: float) -> tuple[int, np.ndarray]:
    if eps == 0:
        _, labels = np.unique(points, axis=0, return_inverse=True)
        labels = labels.reshape(-1)
        return int(labels.max()) + 1, labels
    pairs = cKDTree(points).query_pairs(eps, p=np.inf, output_type="ndarray")
    n = len(points)
    if len(pairs) == 0:
        return n, np.arange(n)
    # connected components of the pair graph by min-label propagation
    labels = np.arange(n)
    while True:
        m = np.minimum(labels[pairs[:, 0]], labels[pairs[:, 1]])
        new = labels.copy()
        np.minimum.at(new, pairs[:, 0], m)
        np.minimum.at(new, pairs[:, 1], m)
        new = new[new]
        if np.array_equal(new, labels):
            break
        labels = new
    roots, labels = np.unique(labels, return_inverse=True)
    return len(roots), labels.reshape(-1)


def merge_atoms(space: StateSpace, weights: np.ndarray, points: np.ndarray,
                eps: float = NORM_TOL) -> SimplexAtomMeasure:
    """Merge atoms within L-infinity distance ``eps`` (single linkage), drop
    zero weights and sort lexicographically."""
    if eps < 0:
        raise MeasureError("merge tolerance must be >= 0")
    keep = weights > 0
    w, p = weights[keep], points[keep]
    n_groups, labels = _merge_groups(p, eps)
    if n_groups < len(w):
        gw = np.bincount(labels, weights=w, minlength=n_groups)
        gp = np.zeros((n_groups, p.shape[1]))
        np.add.at(gp, labels, w[:, None] * p)
        p = gp / gw[:, None]
        w = gw
    order = np.lexsort(p.T[::-1])
    return SimplexAtomMeasure(space, w[order], p[order])


def canonicalize(rho: SimplexAtomMeasure, eps: float = NORM_TOL) -> SimplexAtomMeasure:
    return merge_atoms(rho.space, np.asarray(rho.weights), np.asarray(rho.points), eps)


def symmetry_check(nu: TensorMeasure, tol: float = NORM_TOL) -> tuple[bool, float]:
    """Whether ``nu`` is invariant under all coordinate permutations, and the
    largest entrywise deviation found."""
    if nu.order < 2:
        raise MeasureError("symmetry_check needs order >= 2")
    arr = nu.array()
    worst = 0.0
    for perm in itertools.permutations(range(nu.order)):
        worst = max(worst, float(np.abs(arr - np.transpose(arr, perm)).max()))
    return worst <= tol, worst


def close_atoms(a: SimplexAtomMeasure, b: SimplexAtomMeasure, tol: float) -> bool:
    """Canonical atom lists agree entrywise within ``tol``."""
    a, b = canonicalize(a, tol / 10), canonicalize(b, tol / 10)
    if a.n_atoms != b.n_atoms:
        return False
    return bool(np.abs(a.weights - b.weights).max() <= tol and np.abs(a.points - b.points).max() <= tol)


def dumps(obj) -> str:
    return json.dumps(obj.to_json(), indent=2)
