"""Time partitions of [0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing partition ``0 = t_0 < ... < t_n = T`` with mesh <= 1."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ConfigError("timegrid.TimeGrid", "need at least two grid points (n >= 1)")
        if times[0] != 0.0:
            raise ConfigError("timegrid.TimeGrid", "grid must start at t_0 = 0")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ConfigError("timegrid.TimeGrid", "grid times must be strictly increasing")
        if steps.max() > 1.0:
            raise ConfigError(
                "timegrid.TimeGrid", f"mesh {steps.max():g} exceeds 1"
            )
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        """Step sizes ``dt[i-1] = t_i - t_{i-1}`` for ``i = 1..n``."""
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(self.dt.max())

    def locate(self, t):
        return locate(self, t)

    def refine(self, factor: int) -> "TimeGrid":
        """Split every interval into ``factor`` equal sub-intervals."""
        if factor < 1:
            raise ConfigError("timegrid.refine", "refine factor must be >= 1")
        if factor == 1:
            return self
        frac = np.arange(factor) / factor
        left = self.times[:-1, None] + frac[None, :] * self.dt[:, None]
        fine = np.append(left.ravel(), self.times[-1])
        return TimeGrid(fine)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def __repr__(self):
        return f"TimeGrid(n={self.n}, T={self.horizon:g}, mesh={self.mesh:g})"


def uniform_grid(n: int, T: float) -> TimeGrid:
    """Equidistant grid ``t_i = i T / n``."""
    if int(n) != n or n < 1:
        raise ConfigError("timegrid.uniform_grid", f"n must be a positive integer, got {n!r}")
    if not T > 0:
        raise ConfigError("timegrid.uniform_grid", f"horizon must be positive, got {T!r}")
    n = int(n)
    if T / n > 1.0:
        raise ConfigError("timegrid.uniform_grid", f"mesh {T / n:g} exceeds 1 (n={n}, T={T:g})")
    times = np.arange(n + 1) * (T / n)
    times[-1] = T
    return TimeGrid(times)


def locate(grid: TimeGrid, t):
    """Index of the largest grid time ``t_i <= t``.

    Works on scalars and arrays; ties resolve to the grid point itself so that
    ``locate(grid, t_i) == i``.
    """
    arr = np.asarray(t, dtype=float)
    T = grid.horizon
    if np.any(arr < 0.0) or np.any(arr > T) or np.any(np.isnan(arr)):
        raise DomainError("timegrid.locate", f"time outside [0, {T:g}]")
    idx = np.searchsorted(grid.times, arr, side="right") - 1
    if idx.ndim == 0:
        return int(idx)
    return idx
