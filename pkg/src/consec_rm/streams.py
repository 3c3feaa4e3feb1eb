"""Keyed uniform draws.

Every random decision in an episode is a pure function of
``(seed, episode, period, resource, purpose)``: the key is folded through the
SplitMix64 finalizer and the top 53 bits become a double in ``[0, 1)``.
This gives each (episode, period, resource, purpose) its own stream, so
draws for different resources are independent by construction, episodes are
replayable one at a time, and a whole batch of episodes can be evaluated as
numpy vectors that reproduce the scalar path bit for bit.
"""

from __future__ import annotations

import numpy as np

ARRIVAL = 0
PROPOSE = 1
DOWNDATE = 2
ASSORT = 3
CUSTOMER = 4
COUPLER = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def keyed_uniform(seed: int, episode, t: int, j: int, purpose: int) -> np.ndarray:
    """Uniform draws for an array (or scalar) of episode numbers."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & _MASK64) + _GOLDEN)
        ep = np.asarray(episode, dtype=np.uint64)
        for c in (ep, np.uint64(t), np.uint64(j), np.uint64(purpose)):
            h = _mix(h + _GOLDEN * (c + np.uint64(1)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


class KeyedStream:
    """Scalar view of :func:`keyed_uniform` for one episode."""

    def __init__(self, seed: int, episode: int = 0):
        self.seed = seed
        self.episode = episode

    def uniform(self, t: int, j: int, purpose: int) -> float:
        return float(keyed_uniform(self.seed, self.episode, t, j, purpose))

    def uniforms(self, t: int, m: int, purpose: int) -> list[float]:
        """Draws for resources ``1..m``; element ``j - 1`` belongs to resource ``j``."""
        return [self.uniform(t, j, purpose) for j in range(1, m + 1)]
