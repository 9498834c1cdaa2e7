"""Counter-based uniforms: every draw is a pure hash of (seed, counters...).

Draws never depend on how work is split across threads or in what order
it runs, which is what makes parallel Monte Carlo bit-reproducible.
The mixer is the splitmix64 finalizer.
"""
from __future__ import annotations

import os

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed: int, *counters) -> np.ndarray:
    """64-bit hash of the seed and a sequence of broadcastable integer arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray([seed], dtype=np.uint64) & np.uint64(0xFFFFFFFFFFFFFFFF))
        for c in counters:
            h = _mix(h ^ np.asarray(c, dtype=np.uint64))
    return h


def uniforms(seed: int, *counters) -> np.ndarray:
    """Uniforms on [0, 1) with 53 random bits."""
    return (hash64(seed, *counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def categorical(u: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling; zero-probability categories are never returned."""
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(probs) - 1 - np.argmax(probs[::-1] > 0))


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("RDE_LAB_THREADS")
    if env:
        return max(1, int(env))
    return 1
