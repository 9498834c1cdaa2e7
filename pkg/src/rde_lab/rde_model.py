"""Finite RDE instances and the exact maps g-check, T and T^(n).

An instance is a finite noise space: each noise atom carries a probability,
an arity k and a lookup table for a map S^k -> S (big-endian over the
arguments).  All sums run over the noise atoms directly, so two atoms with
identical tables are kept distinct.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .measure_core import (
    NORM_TOL,
    Measure,
    MeasureError,
    StateSpace,
    TensorMeasure,
    diag_measure,
    marginal,
    product,
    tv_distance,
)

KAPPA_MAX_DEFAULT = 4
TENSOR_BUDGET = 10**7


class SpecError(ValueError):
    """Invalid RDE instance; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class BudgetExceeded(RuntimeError):
    """A dense computation would exceed its configured size budget."""


@dataclass(frozen=True, eq=False)
class NoiseAtom:
    prob: float
    arity: int
    table: tuple[int, ...]
    name: str = ""


@dataclass(frozen=True, eq=False)
class RdeSpec:
    space: StateSpace
    noise: tuple[NoiseAtom, ...]
    name: str = ""

    @property
    def kappa_max(self) -> int:
        return max(a.arity for a in self.noise)

    @property
    def probs(self) -> np.ndarray:
        return np.array([a.prob for a in self.noise])

    def index(self, name: str) -> int:
        for i, a in enumerate(self.noise):
            if a.name == name:
                return i
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "states": list(self.space.labels),
            "noise": [
                {"name": a.name, "prob": a.prob, "arity": a.arity, "table": list(a.table)}
                for a in self.noise
            ],
        }


def build_spec(data: dict, kappa_max: int = KAPPA_MAX_DEFAULT) -> RdeSpec:
    """Validate a JSON-like instance description; raises SpecError at the first violation."""
    if not isinstance(data, dict):
        raise SpecError("$", "instance must be a JSON object")
    states = data.get("states")
    if not isinstance(states, list) or not states:
        raise SpecError("states", "must be a nonempty list")
    try:
        space = StateSpace(tuple(states))
    except MeasureError as exc:
        raise SpecError("states", str(exc)) from None
    noise = data.get("noise")
    if not isinstance(noise, list) or not noise:
        raise SpecError("noise", "must be a nonempty list")
    n = space.size
    atoms = []
    for i, item in enumerate(noise):
        path = f"noise[{i}]"
        if not isinstance(item, dict):
            raise SpecError(path, "must be an object")
        for key in ("prob", "arity", "table"):
            if key not in item:
                raise SpecError(f"{path}.{key}", "missing")
        prob = item["prob"]
        if not isinstance(prob, (int, float)) or isinstance(prob, bool) or not np.isfinite(prob) or prob < 0:
            raise SpecError(f"{path}.prob", f"must be a finite number >= 0, got {prob!r}")
        arity = item["arity"]
        if arity in ("inf", "infinity") or (isinstance(arity, float) and np.isinf(arity)):
            raise SpecError(f"{path}.arity", "infinite arity is not supported")
        if not isinstance(arity, int) or isinstance(arity, bool) or arity < 0:
            raise SpecError(f"{path}.arity", f"must be an integer >= 0, got {arity!r}")
        if arity > kappa_max:
            raise SpecError(f"{path}.arity", f"{arity} exceeds kappa_max={kappa_max}")
        table = item["table"]
        if isinstance(table, int) and arity == 0:
            table = [table]
        if not isinstance(table, list):
            raise SpecError(f"{path}.table", "must be a list of state indices")
        if len(table) != n**arity:
            raise SpecError(f"{path}.table", f"length {len(table)}, expected {n}**{arity} = {n**arity}")
        for j, v in enumerate(table):
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v < n:
                raise SpecError(f"{path}.table[{j}]", f"state index {v!r} out of range [0, {n})")
        atoms.append(NoiseAtom(float(prob), arity, tuple(table), str(item.get("name", f"w{i}"))))
    total = sum(a.prob for a in atoms)
    if abs(total - 1.0) > NORM_TOL:
        raise SpecError("noise[*].prob", f"probabilities sum to {total!r}, expected 1")
    atoms = [NoiseAtom(a.prob / total, a.arity, a.table, a.name) for a in atoms]
    return RdeSpec(space, tuple(atoms), str(data.get("name", "")))


def load_spec(path: str | Path) -> RdeSpec:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError("$", f"invalid JSON: {exc}") from None
    return build_spec(data)


BUNDLED = {"ex-a": "coin", "ex-b": "xor", "ex-c": "noisy_copy", "ex-d": "and_or"}


def bundled(name: str, p: float | None = None) -> RdeSpec:
    """One of the bundled instances, by key (``ex-a``..``ex-d``) or file stem.

    ``p`` overrides the flip probability of the noisy-copy instance.
    """
    stem = BUNDLED.get(name.lower(), name)
    data = json.loads(resources.files("rde_lab").joinpath(f"instances/{stem}.json").read_text())
    if p is not None:
        if stem != "noisy_copy":
            raise ValueError("p only applies to the noisy-copy instance")
        for item in data["noise"]:
            item["prob"] = p if item["name"] == "flip" else 1.0 - p
    return build_spec(data)


def random_spec(rng: np.random.Generator, n_states: int, n_noise: int, max_arity: int) -> RdeSpec:
    """Random instance with uniformly drawn tables and Dirichlet noise law."""
    probs = rng.dirichlet(np.ones(n_noise))
    noise = []
    for i in range(n_noise):
        k = int(rng.integers(0, max_arity + 1))
        noise.append({"prob": float(probs[i]), "arity": k,
                      "table": rng.integers(0, n_states, n_states**k).tolist()})
    return build_spec({"states": [str(s) for s in range(n_states)], "noise": noise})


def apply_g(spec: RdeSpec, omega: int, args: Sequence[int]) -> int:
    atom = spec.noise[omega]
    if len(args) != atom.arity:
        raise ValueError(f"noise {omega} has arity {atom.arity}, got {len(args)} arguments")
    n = spec.space.size
    idx = 0
    for a in args:
        if not 0 <= a < n:
            raise ValueError(f"state index {a} out of range")
        idx = idx * n + a
    return atom.table[idx]


@lru_cache(maxsize=256)
def _nvariate_index(table: tuple[int, ...], n_states: int, arity: int, order: int) -> np.ndarray:
    """Flat output index of g^(order) for every (S^order)^arity argument matrix.

    Argument matrices are enumerated column-major as the product of ``arity``
    order-tensors, each big-endian; the result is read-only.
    """
    tab = np.asarray(table)
    if arity:
        cols = np.indices((n_states**order,) * arity).reshape(arity, -1)
    else:
        cols = np.zeros((0, 1), dtype=np.int64)
    out = np.zeros(cols.shape[1], dtype=np.int64)
    for j in range(order):
        digit = n_states ** (order - 1 - j)
        arg = np.zeros(cols.shape[1], dtype=np.int64)
        for i in range(arity):
            arg = arg * n_states + (cols[i] // digit) % n_states
        out = out * n_states + tab[arg]
    out.setflags(write=False)
    return out


def _pushforward(spec: RdeSpec, omega: int, factors: Sequence[np.ndarray], order: int) -> np.ndarray:
    atom = spec.noise[omega]
    n = spec.space.size
    size = n ** (order * atom.arity)
    if size > TENSOR_BUDGET:
        raise BudgetExceeded(
            f"noise {omega}: |S|^(n*k) = {size} exceeds tensor budget {TENSOR_BUDGET}")
    joint = np.ones(1)
    for f in factors:
        joint = np.multiply.outer(joint, f).reshape(-1)
    idx = _nvariate_index(atom.table, n, atom.arity, order)
    return np.bincount(idx, weights=joint, minlength=n**order)


def check_g(spec: RdeSpec, omega: int, margs: Sequence[Measure]) -> Measure:
    """Law of g_omega(X_1..X_k) for independent X_j ~ margs[j]."""
    atom = spec.noise[omega]
    if len(margs) != atom.arity:
        raise ValueError(f"noise {omega} has arity {atom.arity}, got {len(margs)} measures")
    return Measure(spec.space, _pushforward(spec, omega, [m.weights for m in margs], 1))


def apply_T(spec: RdeSpec, mu: Measure) -> Measure:
    out = np.zeros(spec.space.size)
    for i, atom in enumerate(spec.noise):
        out += atom.prob * _pushforward(spec, i, [mu.weights] * atom.arity, 1)
    return Measure(spec.space, out)


def apply_Tn(spec: RdeSpec, nu: TensorMeasure, n: int | None = None) -> TensorMeasure:
    """The n-variate map: n copies driven by the same noise, columns i.i.d. nu."""
    n = nu.order if n is None else n
    if n != nu.order:
        raise MeasureError(f"tensor order {nu.order} does not match n={n}")
    out = np.zeros(spec.space.size**n)
    for i, atom in enumerate(spec.noise):
        out += atom.prob * _pushforward(spec, i, [nu.entries] * atom.arity, n)
    return TensorMeasure(spec.space, n, out)


def apply_T_power(spec: RdeSpec, mu: Measure, t: int) -> Measure:
    for _ in range(t):
        mu = apply_T(spec, mu)
    return mu


def apply_Tn_power(spec: RdeSpec, nu: TensorMeasure, t: int) -> TensorMeasure:
    for _ in range(t):
        nu = apply_Tn(spec, nu)
    return nu


def marginal_consistency_check(spec: RdeSpec, nu: TensorMeasure, coords: Sequence[int]) -> float:
    """tv distance between T^(n)(nu)|coords and T^(m)(nu|coords)."""
    lhs = marginal(apply_Tn(spec, nu), coords)
    sub = marginal(nu, coords)
    return tv_distance(lhs, apply_Tn(spec, sub))


@dataclass
class TraceEntry:
    t: int
    residual: float
    snapshot: Measure | TensorMeasure | None = None


@dataclass
class IterationTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def append(self, t: int, residual: float, snapshot=None) -> None:
        if self.entries and t <= self.entries[-1].t:
            raise ValueError("trace steps must increase")
        self.entries.append(TraceEntry(t, residual, snapshot))

    @property
    def residuals(self) -> list[float]:
        return [e.residual for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> list[dict]:
        return [{"t": e.t, "residual": e.residual} for e in self.entries]


def iterate_T(spec: RdeSpec, mu0: Measure, t_max: int = 10**4, tol: float = 1e-10,
              snapshots: bool = False) -> tuple[Measure, IterationTrace, bool]:
    """Iterate mu_{t+1} = T(mu_t) until tv(T(mu_t), mu_t) <= tol.

    The trace records, for each t, the residual tv(T(mu_t), mu_t).  The
    returned measure is T(mu_t) for the last t, i.e. the newest iterate.
    """
    if t_max < 1 or tol <= 0:
        raise ValueError("need t_max >= 1 and tol > 0")
    trace = IterationTrace()
    mu = mu0
    for t in range(t_max + 1):
        nxt = apply_T(spec, mu)
        r = tv_distance(nxt, mu)
        trace.append(t, r, mu if snapshots else None)
        if r <= tol:
            return nxt, trace, True
        if t == t_max:
            break
        mu = nxt
    return nxt, trace, False


def fixed_point_residual(spec: RdeSpec, mu: Measure) -> float:
    return tv_distance(apply_T(spec, mu), mu)


def require_fixed_point(spec: RdeSpec, mu: Measure, tol: float) -> None:
    r = fixed_point_residual(spec, mu)
    if r > tol:
        raise NotFixedPoint(f"mu is not a fixed point of T: tv(T(mu), mu) = {r:.3e} > {tol:.1e}")


class NotFixedPoint(ValueError):
    pass


def independent_start(mu: Measure, n: int = 2) -> TensorMeasure:
    return product([mu] * n)


def diagonal_start(mu: Measure, n: int = 2) -> TensorMeasure:
    return diag_measure(mu, n)
