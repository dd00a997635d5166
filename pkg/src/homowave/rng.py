"""Reproducible Wiener increments from a counter-based generator.

The increment for ``(master_seed, path_index, step, component)`` depends on
that key alone: Philox is keyed by ``(master_seed, path_index)`` and the
counter position is ``step * m + component``.  Two raw words per increment go
through Box-Muller with scalar libm calls so no vectorised code path can
change the low bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["WienerPath", "sample_path", "gaussian_at"]

_TWO53 = 2.0**-53


def _box_muller(r1: int, r2: int) -> float:
    u1 = ((r1 >> 11) + 1) * _TWO53  # (0, 1]
    u2 = (r2 >> 11) * _TWO53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _generator(master_seed: int, path_index: int) -> np.random.Philox:
    if master_seed < 0 or path_index < 0:
        raise ValueError("seed and path index must be non-negative")
    return np.random.Philox(key=[master_seed, path_index])


def gaussian_at(master_seed: int, path_index: int, index: int) -> float:
    """Standard normal number ``index`` of the stream for one path."""
    bg = _generator(master_seed, path_index)
    word = 2 * index
    bg.advance(word // 4)
    raw = bg.random_raw(4)
    off = word % 4
    return _box_muller(int(raw[off]), int(raw[off + 1]))


@dataclass(frozen=True)
class WienerPath:
    """Increments of an m-dimensional Brownian motion on a uniform grid of [0, T]."""

    increments: np.ndarray  # (n_t, m)
    horizon: float
    master_seed: int = 0
    path_index: int = 0

    @property
    def n_t(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    def coarsen(self, factor: int) -> "WienerPath":
        """Sum blocks of ``factor`` consecutive increments.

        Powers of two are summed by repeated pairwise halving, so coarsening by
        4 equals coarsening by 2 twice, bit for bit.
        """
        if factor < 1 or self.n_t % factor:
            raise ValueError(f"factor {factor} does not divide {self.n_t} steps")
        inc = self.increments
        if factor & (factor - 1) == 0:
            while inc.shape[0] > self.n_t // factor:
                inc = inc[0::2] + inc[1::2]
        else:
            inc = inc.reshape(-1, factor, self.m).sum(axis=1)
        return WienerPath(inc, self.horizon, self.master_seed, self.path_index)

    def to_steps(self, n_steps: int) -> "WienerPath":
        if self.n_t % n_steps:
            raise ValueError(f"path grid of {self.n_t} steps is not a refinement of {n_steps} steps")
        return self.coarsen(self.n_t // n_steps)

    def values(self) -> np.ndarray:
        """W(t_n) for n = 0..n_t, shape (n_t + 1, m)."""
        return np.vstack([np.zeros((1, self.m)), np.cumsum(self.increments, axis=0)])


def sample_path(m: int, n_t: int, horizon: float, master_seed: int, path_index: int) -> WienerPath:
    """Draw N(0, dt) increments keyed by (master_seed, path_index, step, component)."""
    if n_t < 1 or m < 1:
        raise ValueError("need at least one step and one component")
    raw = _generator(master_seed, path_index).random_raw(2 * n_t * m)
    z = np.array([_box_muller(int(raw[2 * j]), int(raw[2 * j + 1])) for j in range(n_t * m)])
    scale = math.sqrt(horizon / n_t)
    return WienerPath((z * scale).reshape(n_t, m), float(horizon), master_seed, path_index)
