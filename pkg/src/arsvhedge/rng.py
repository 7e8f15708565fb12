"""Reproducible random streams.

Every stream is a Philox (counter-based) generator keyed by a master seed and
a tuple of non-negative integers, so a path or an inner Monte Carlo batch gets
the same numbers regardless of the order or the process it is computed in.
"""
from __future__ import annotations

import numpy as np

# first element of every spawn key; keeps stream families disjoint
EVAL_PATHS = 0
INNER_MC = 1
SCRATCH = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *key)``."""
    if seed < 0 or any(k < 0 for k in key):
        raise ValueError("seed and stream key must be non-negative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


class StreamLedger:
    """Records which stream keys were handed out (used to audit disjointness)."""

    def __init__(self) -> None:
        self.keys: list[tuple[int, ...]] = []

    def __call__(self, seed: int, *key: int) -> np.random.Generator:
        self.keys.append(tuple(int(k) for k in key))
        return substream(seed, *key)

    def family(self, tag: int) -> set[tuple[int, ...]]:
        return {k for k in self.keys if k and k[0] == tag}
