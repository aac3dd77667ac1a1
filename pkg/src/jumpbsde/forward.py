"""Brownian increments, Euler schemes for the pre- and post-jump forward
processes, and their recombination into the jump path.

Notation: ``x0_paths[m, i]`` is the pre-jump Euler value at ``t_i`` on path
``m``; the post-jump family ``X1(t_j)`` restarts from it with the jump
injected in the step that ends at ``t_j``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import ConfigError, NumericalError
from .model import DensityModel, ModelSpec, sample_jump_times
from .timegrid import TimeGrid, locate

_BLOCK = 1 << 15


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated paths on one grid.

    ``taus`` encodes jumps after the horizon as ``inf`` and ``jump_index``
    holds ``locate(tau)`` (``-1`` for those paths).
    """

    grid: TimeGrid
    dW: np.ndarray
    taus: np.ndarray
    jump_index: np.ndarray
    x0_paths: Optional[np.ndarray] = None
    rng_descriptor: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.dW.shape[0]

    @property
    def jumped_before_horizon(self) -> np.ndarray:
        return self.jump_index >= 0


def _jump_indices(grid: TimeGrid, taus: np.ndarray) -> np.ndarray:
    idx = np.full(taus.shape, -1, dtype=np.int64)
    finite = np.isfinite(taus)
    if finite.any():
        idx[finite] = locate(grid, taus[finite])
    return idx


def _draw(grid: TimeGrid, M: int, seed: int, density: DensityModel, refine: int):
    if M < 1:
        raise ConfigError("forward.simulate_increments", "path count must be >= 1")
    if refine < 1:
        raise ConfigError("forward.simulate_increments", "refine factor must be >= 1")
    fine = grid.refine(refine)
    sqrt_dt = np.sqrt(fine.dt)
    dW_fine = np.empty((M, fine.n))
    steps = np.arange(fine.n, dtype=np.uint64)
    for start in range(0, M, _BLOCK):
        stop = min(start + _BLOCK, M)
        paths = np.arange(start, stop, dtype=np.uint64)
        dW_fine[start:stop] = rng.normals(seed, rng.CHANNEL_W, paths[:, None], steps[None, :])
    dW_fine *= sqrt_dt[None, :]
    u_tau = rng.uniforms(seed, rng.CHANNEL_TAU, np.arange(M, dtype=np.uint64), 0)
    taus = sample_jump_times(density, u_tau, grid.horizon)
    return fine, dW_fine, taus


def simulate_increments(
    grid: TimeGrid, M: int, seed: int, density: DensityModel, refine: int = 1
) -> PathBundle:
    """Brownian increments and jump times for ``M`` paths.

    With ``refine > 1`` the increments are drawn on the refined grid and
    summed block-wise, so the result is coupled with
    :func:`simulate_coupled` at the same refine factor.
    """
    return simulate_coupled(grid, M, seed, density, refine)[0]


def simulate_coupled(
    grid: TimeGrid, M: int, seed: int, density: DensityModel, refine: int
) -> tuple[PathBundle, PathBundle]:
    """Coarse and refined bundles driven by the same Brownian path and jump times."""
    fine, dW_fine, taus = _draw(grid, M, seed, density, refine)
    descriptor = {"seed": int(seed), "refine": int(refine), "layout": "splitmix64(seed,path,step,channel)"}
    if refine == 1:
        dW = dW_fine
    else:
        dW = dW_fine.reshape(M, grid.n, refine).sum(axis=2)
    coarse = PathBundle(grid, dW, taus, _jump_indices(grid, taus), rng_descriptor=descriptor)
    fine_bundle = PathBundle(fine, dW_fine, taus, _jump_indices(fine, taus), rng_descriptor=descriptor)
    return coarse, fine_bundle


def _step(model: ModelSpec, t: float, x: np.ndarray, dt: float, dW: np.ndarray) -> np.ndarray:
    return x + model.drift(t, x) * dt + model.diffusion(t, x) * dW


def _jump_step(model: ModelSpec, t: float, x: np.ndarray, dt: float, dW: np.ndarray) -> np.ndarray:
    return _step(model, t, x, dt, dW) + model.jump_coeff(t, x)


def _check_finite(values: np.ndarray, origin: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        rows = np.nonzero(bad.reshape(values.shape[0], -1).any(axis=1))[0]
        raise NumericalError(origin, f"non-finite state on path {int(rows[0])}")


def euler_x0(model: ModelSpec, bundle: PathBundle) -> PathBundle:
    """Pre-jump Euler scheme; returns a bundle with ``x0_paths`` filled."""
    grid = bundle.grid
    x = np.empty((bundle.paths, grid.n + 1))
    x[:, 0] = model.x0
    for i in range(1, grid.n + 1):
        x[:, i] = _step(model, grid.times[i - 1], x[:, i - 1], grid.dt[i - 1], bundle.dW[:, i - 1])
    _check_finite(x, "forward.euler_x0")
    x.setflags(write=False)
    return replace(bundle, x0_paths=x)


class X1Family:
    """Post-jump Euler family ``X1_{t_i}(t_j)`` for every jump index ``j``.

    Slices are computed on demand (``M x (n+1-j)`` each) because the full
    triangle does not fit in memory at production path counts; pass
    ``cache=True`` to keep them. Values before the jump are served from the
    pre-jump paths, never recomputed.
    """

    def __init__(self, model: ModelSpec, bundle: PathBundle, cache: bool = False):
        if bundle.x0_paths is None:
            raise ConfigError("forward.euler_x1_family", "pre-jump paths not simulated")
        self.model = model
        self.bundle = bundle
        self.cache = cache
        self._slices: dict[int, np.ndarray] = {}
        self._diagonal = None
        self._own = None

    @property
    def n(self) -> int:
        return self.bundle.grid.n

    def jump_value(self, j: int) -> np.ndarray:
        """``X1_{t_j}(t_j)``: the value just after the jump injected at index ``j``."""
        grid, x0 = self.bundle.grid, self.bundle.x0_paths
        if j == 0:
            start = x0[:, 0]
            return start + self.model.jump_coeff(grid.times[0], start)
        return _jump_step(self.model, grid.times[j - 1], x0[:, j - 1], grid.dt[j - 1], self.bundle.dW[:, j - 1])

    def slice(self, j: int) -> np.ndarray:
        """Array of shape ``(M, n+1-j)``; column ``k`` is ``X1_{t_{j+k}}(t_j)``."""
        if not 0 <= j <= self.n:
            raise IndexError(j)
        if j in self._slices:
            return self._slices[j]
        grid = self.bundle.grid
        out = np.empty((self.bundle.paths, self.n + 1 - j))
        out[:, 0] = self.jump_value(j)
        for i in range(j + 1, self.n + 1):
            out[:, i - j] = _step(self.model, grid.times[i - 1], out[:, i - j - 1], grid.dt[i - 1], self.bundle.dW[:, i - 1])
        _check_finite(out, "forward.euler_x1_family")
        out.setflags(write=False)
        if self.cache:
            self._slices[j] = out
        return out

    def value(self, i: int, j: int) -> np.ndarray:
        if i < j:
            return self.bundle.x0_paths[:, i]
        return self.slice(j)[:, i - j]

    def diagonal(self) -> np.ndarray:
        """``X1_{t_i}(t_i)`` for every ``i``, shape ``(M, n+1)``."""
        if self._diagonal is None:
            diag = np.column_stack([self.jump_value(j) for j in range(self.n + 1)])
            _check_finite(diag, "forward.euler_x1_family")
            diag.setflags(write=False)
            self._diagonal = diag
        return self._diagonal

    def own_jump(self) -> np.ndarray:
        """``X1_{t_i}(pi(tau_m))`` on each path's own jump index, shape ``(M, n+1)``.

        Paths whose jump falls after the horizon carry the pre-jump values.
        """
        if self._own is None:
            grid, x0 = self.bundle.grid, self.bundle.x0_paths
            jidx = self.bundle.jump_index
            has_jump = jidx >= 0
            out = np.array(x0, copy=True)
            diag = self.diagonal()
            out[:, 0] = np.where(jidx == 0, diag[:, 0], x0[:, 0])
            for i in range(1, self.n + 1):
                after = has_jump & (jidx < i)
                stepped = _step(self.model, grid.times[i - 1], out[:, i - 1], grid.dt[i - 1], self.bundle.dW[:, i - 1])
                col = np.where(jidx == i, diag[:, i], x0[:, i])
                out[:, i] = np.where(after, stepped, col)
            _check_finite(out, "forward.euler_x1_family")
            out.setflags(write=False)
            self._own = out
        return self._own

    def materialize(self) -> None:
        self.cache = True
        for j in range(self.n + 1):
            self.slice(j)


def euler_x1_family(model: ModelSpec, bundle: PathBundle, cache: bool = False) -> X1Family:
    return X1Family(model, bundle, cache=cache)


def recombine_x(bundle: PathBundle, family: X1Family, t: float) -> np.ndarray:
    """Jump-path approximation at time ``t``: pre-jump value before ``tau``."""
    i = locate(bundle.grid, t)
    return np.where(t < bundle.taus, bundle.x0_paths[:, i], family.own_jump()[:, i])


def recombined_paths(bundle: PathBundle, family: X1Family) -> np.ndarray:
    """``recombine_x`` at every grid time, shape ``(M, n+1)``."""
    times = bundle.grid.times
    before = times[None, :] < bundle.taus[:, None]
    return np.where(before, bundle.x0_paths, family.own_jump())


def dump_paths(bundle: PathBundle, path: str) -> None:
    """Write the path dump CSV (``path,step,time,dW,x0,tau``)."""
    grid = bundle.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "step", "time", "dW", "x0", "tau"])
        for m in range(bundle.paths):
            tau = repr(float(bundle.taus[m]))
            for i in range(grid.n + 1):
                dw = "" if i == 0 else repr(float(bundle.dW[m, i - 1]))
                x = "" if bundle.x0_paths is None else repr(float(bundle.x0_paths[m, i]))
                writer.writerow([m, i, repr(float(grid.times[i])), dw, x, tau])
