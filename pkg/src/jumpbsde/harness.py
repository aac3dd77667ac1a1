"""Error functionals against reference solutions, grid sweeps and slope fits.

Forward errors compare the scheme with an Euler reference on a refined grid
driven by the same Brownian path and jump time. Backward errors compare the
recombined ``(Y, Z, U)`` with a reference provider evaluated along the
refined-reference states at the coarse grid times.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import oracle
from .backward import BackwardConfig, recombine_all, solve
from .errors import ConfigError, JumpBSDEError
from .forward import PathBundle, X1Family, euler_x0, recombined_paths, simulate_coupled
from .model import ModelSpec, intensity
from .rng import derive_seed
from .timegrid import locate, uniform_grid

ERROR_COLUMNS = ("err_x", "err_y", "err_z", "err_u")
ERRORS_HEADER = ["model", "mode", "n", "mesh", "err_x", "se_x", "err_y", "se_y",
                 "err_z", "se_z", "err_u", "se_u", "wall_ms"]
SLOPES_HEADER = ["model", "mode", "column", "slope", "ci_lo", "ci_hi"]


@dataclass(frozen=True)
class ErrorRow:
    n: int
    mesh: float
    err_x: float
    se_x: float
    err_y: float
    se_y: float
    err_z: float
    se_z: float
    err_u: float
    se_u: float
    wall_ms: float = 0.0


@dataclass(frozen=True)
class Slope:
    slope: float
    ci_lo: float
    ci_hi: float

    @property
    def excludes_zero(self) -> bool:
        return self.ci_lo > 0.0 or self.ci_hi < 0.0


@dataclass
class ErrorReport:
    model: str
    mode: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def meshes(self) -> np.ndarray:
        return self.column("mesh")


def _check_coupled(coarse: PathBundle, fine: PathBundle) -> int:
    if coarse.paths != fine.paths:
        raise ConfigError("harness.forward_error", "reference and scheme path counts differ")
    if coarse.rng_descriptor.get("seed") != fine.rng_descriptor.get("seed"):
        raise ConfigError("harness.forward_error", "reference and scheme seeds differ")
    if not np.array_equal(coarse.taus, fine.taus):
        raise ConfigError("harness.forward_error", "reference and scheme jump times differ")
    ratio = fine.grid.n // coarse.grid.n
    if ratio * coarse.grid.n != fine.grid.n or not np.allclose(
        fine.grid.times[::ratio], coarse.grid.times, rtol=0, atol=1e-12
    ):
        raise ConfigError("harness.forward_error", "reference grid does not refine the scheme grid")
    return ratio


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    M = samples.shape[0]
    se = float(samples.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return float(samples.mean()), se


def forward_error(
    fine: PathBundle, fine_family: X1Family, coarse: PathBundle, coarse_family: X1Family,
    grid_only: bool = False,
) -> tuple[float, float]:
    """``E[sup_t |X_ref - X_pi|^2]`` over refined grid times, and its SE.

    The scheme path is held constant between its grid times; the jump
    indicator is evaluated at the refined time itself. With ``grid_only`` the
    sup runs over the coarse grid times only.
    """
    ratio = _check_coupled(coarse, fine)
    x_ref = recombined_paths(fine, fine_family)
    tf = fine.grid.times
    cols = np.arange(0, fine.grid.n + 1, ratio) if grid_only else np.arange(fine.grid.n + 1)
    idx = locate(coarse.grid, tf[cols])
    x0c, x1c = coarse.x0_paths, coarse_family.own_jump()
    taus = coarse.taus
    worst = np.zeros(coarse.paths)
    for k, i in zip(cols, idx):
        x_pi = np.where(tf[k] < taus, x0c[:, i], x1c[:, i])
        np.maximum(worst, (x_ref[:, k] - x_pi) ** 2, out=worst)
    return _mean_se(worst)


def forward_error_fixed_jump(
    fine: PathBundle, fine_family: X1Family, coarse: PathBundle, coarse_family: X1Family,
    theta: float,
) -> tuple[float, float]:
    """Per-jump-time variant: ``E[sup_{t >= theta} |X1_t(theta) - X1_pi(t)(pi(theta))|^2]``.

    The reference is the refined-grid post-jump path with its jump injected
    at the refined index of ``theta``.
    """
    _check_coupled(coarse, fine)
    tf = fine.grid.times
    jf, jc = int(locate(fine.grid, theta)), int(locate(coarse.grid, theta))
    s_f, s_c = fine_family.slice(jf), coarse_family.slice(jc)
    worst = np.zeros(coarse.paths)
    for k in range(jf, fine.grid.n + 1):
        if tf[k] < theta:
            continue
        i = max(int(locate(coarse.grid, tf[k])), jc)
        np.maximum(worst, (s_f[:, k - jf] - s_c[:, i - jc]) ** 2, out=worst)
    return _mean_se(worst)


def reference_states(fine: PathBundle, fine_family: X1Family, n_coarse: int) -> np.ndarray:
    """Refined-reference jump path sampled at the coarse grid times."""
    ratio = fine.grid.n // n_coarse
    return recombined_paths(fine, fine_family)[:, ::ratio]


def backward_error(reference, recombined, model: ModelSpec, bundle: PathBundle, states: np.ndarray) -> dict:
    """Squared-error functionals of ``(Y, Z, U)`` against ``reference``.

    ``states[:, i]`` is the reference jump path at grid time ``t_i``. Returns
    ``{"err_y": (value, se), "err_z": ..., "err_u": ...}``.
    """
    if reference is None:
        raise ConfigError("harness.backward_error", f"no reference provider for model {model.name!r}")
    grid = bundle.grid
    n, taus = grid.n, bundle.taus
    gy = np.empty((bundle.paths, n + 1))
    gz = np.zeros(bundle.paths)
    gu = np.zeros(bundle.paths)
    for i, t in enumerate(grid.times):
        x = states[:, i]
        before, alive = t < taus, t <= taus
        y_ref = np.where(before, reference.y0(t, x), reference.y1(t, x))
        gy[:, i] = (y_ref - recombined.y[:, i]) ** 2
        if i == n:
            continue
        dt = grid.dt[i]
        z_ref = np.where(alive, reference.z0(t, x), reference.z1(t, x))
        gz += dt * (z_ref - recombined.z[:, i]) ** 2
        u_ref = np.where(alive, reference.y1(t, x + model.jump_coeff(t, x)) - reference.y0(t, x), 0.0)
        lam = intensity(model.density, t, alive)
        gu += dt * lam * (u_ref - recombined.u[:, i]) ** 2
    means = gy.mean(axis=0)
    k = int(np.argmax(means))
    return {
        "err_y": (float(means[k]), _mean_se(gy[:, k])[1]),
        "err_z": _mean_se(gz),
        "err_u": _mean_se(gu),
    }


def fit_slope(meshes: Sequence[float], errors: Sequence[float], level: float = 0.95) -> Slope:
    """OLS slope of ``log err`` on ``log mesh`` with a two-sided t interval.

    Nonpositive errors have no logarithm; the slope is then ``nan``.
    """
    h = np.asarray(meshes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3:
        raise ConfigError("harness.convergence_study", "insufficient points for slope")
    if not np.all(e > 0) or not np.all(np.isfinite(e)):
        return Slope(math.nan, math.nan, math.nan)
    fit = stats.linregress(np.log(h), np.log(e))
    half = stats.t.ppf(0.5 + level / 2, h.size - 2) * fit.stderr
    return Slope(float(fit.slope), float(fit.slope - half), float(fit.slope + half))


def convergence_study(
    model: ModelSpec,
    n_list: Sequence[int],
    M: int,
    seed: int,
    mode: str = "lsmc",
    refine: int = 8,
    config: Optional[BackwardConfig] = None,
    reference=None,
    reference_n: Optional[int] = None,
    wall_time: bool = False,
) -> ErrorReport:
    """Forward, backward and error evaluation for every ``n``, then slopes.

    Seeds are derived from ``(seed, n)``. The TRIG reference is a quadrature
    solution on ``reference_n`` steps (default ``4 * max(n_list)``).
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3:
        raise ConfigError("harness.convergence_study", "insufficient points for slope")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("harness.convergence_study", "n_list must be strictly ascending")
    cfg = config or BackwardConfig(mode=mode)
    if cfg.mode != mode:
        raise ConfigError("harness.convergence_study", "mode disagrees with backward config")
    if reference is None:
        ref_n = reference_n or 4 * max(n_list)
        reference = oracle.reference_for(model, ref_n, cfg.gh_nodes, cfg.mesh_nodes)

    report = ErrorReport(model.name, mode)
    for n in n_list:
        start = time.perf_counter()
        try:
            row = _study_point(model, n, M, derive_seed(seed, n), refine, cfg, reference)
        except JumpBSDEError as exc:
            raise type(exc)(exc.origin, f"n={n}: {exc.message}") from exc
        wall = (time.perf_counter() - start) * 1e3 if wall_time else 0.0
        report.rows.append(ErrorRow(n, row.pop("mesh"), **row, wall_ms=wall))
    for col in ERROR_COLUMNS:
        report.slopes[col] = fit_slope(report.meshes, report.column(col))
    return report


def _study_point(model, n, M, seed, refine, cfg, reference) -> dict:
    grid = uniform_grid(n, model.horizon)
    coarse, fine = simulate_coupled(grid, M, seed, model.density, refine)
    coarse, fine = euler_x0(model, coarse), euler_x0(model, fine)
    fam_c, fam_f = X1Family(model, coarse), X1Family(model, fine)
    err_x, se_x = forward_error(fine, fam_f, coarse, fam_c)
    states = reference_states(fine, fam_f, n)
    del fine, fam_f
    sol = solve(model, coarse, cfg)
    be = backward_error(reference, recombine_all(sol), model, coarse, states)
    return {
        "mesh": grid.mesh, "err_x": err_x, "se_x": se_x,
        "err_y": be["err_y"][0], "se_y": be["err_y"][1],
        "err_z": be["err_z"][0], "se_z": be["err_z"][1],
        "err_u": be["err_u"][0], "se_u": be["err_u"][1],
    }


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_errors_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERRORS_HEADER)
        for r in report.rows:
            w.writerow([report.model, report.mode, r.n] + [
                _fmt(getattr(r, k)) for k in ERRORS_HEADER[3:]
            ])


def write_slopes_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SLOPES_HEADER)
        for col in ERROR_COLUMNS:
            s = report.slopes[col]
            w.writerow([report.model, report.mode, col, _fmt(s.slope), _fmt(s.ci_lo), _fmt(s.ci_hi)])
