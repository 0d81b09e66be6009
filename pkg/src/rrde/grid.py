"""Uniform time grids and helpers for paths sampled on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*T/M on [0, T].

    M is the number of cells, so there are M + 1 nodes.
    """

    T: float
    M: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"need at least one cell, got M={self.M}")
        if self.T <= 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        object.__setattr__(self, "nodes", np.linspace(0.0, self.T, self.M + 1))

    @property
    def h(self) -> float:
        return self.T / self.M

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.M * factor)

    def coarsen(self, factor: int = 2) -> "TimeGrid":
        if self.M % factor != 0:
            raise ValueError(f"M={self.M} not divisible by {factor}")
        return TimeGrid(self.T, self.M // factor)

    def index_of(self, t: float) -> int:
        """Node index of a time that must sit (up to round-off) on the grid."""
        i = int(round(t / self.h))
        if not (0 <= i <= self.M) or abs(self.nodes[i] - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a node of {self}")
        return i


def path_on_grid(f, grid: TimeGrid) -> np.ndarray:
    """Sample a scalar callable on the grid nodes; pass arrays through."""
    if callable(f):
        return np.asarray([float(f(t)) for t in grid.nodes])
    arr = np.asarray(f, dtype=float)
    if arr.shape[0] != grid.M + 1:
        raise ValueError(f"path has {arr.shape[0]} nodes, grid expects {grid.M + 1}")
    return arr
