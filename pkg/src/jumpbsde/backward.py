"""Backward implicit schemes for the post-jump family and the pre-jump
equation, and their recombination into ``(Y, Z, U)`` along each path.

Two ways of computing the one-step conditional expectations are supported:

* ``"lsmc"``: least-squares regression on the current state
  (:mod:`jumpbsde.condexp`), one fit per time index and jump index;
* ``"quadrature"``: mesh functions from :func:`jumpbsde.oracle.quadrature_dp`,
  i.e. exact conditional expectations up to quadrature error.

The implicit ``Y`` update is always solved per path, with the path's own
diagonal value in the jump slot of the generator.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import oracle
from .condexp import DEFAULT_RIDGE, Basis, evaluate_design, fit_design
from .errors import AdmissibilityError, ConfigError, NumericalError
from .forward import PathBundle, X1Family, euler_x0, euler_x1_family
from .model import ModelSpec
from .timegrid import locate

MODES = ("lsmc", "quadrature")


def default_threads() -> int:
    raw = os.environ.get("JUMPBSDE_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class BackwardConfig:
    mode: str = "lsmc"
    degree: int = 3
    ridge: float = DEFAULT_RIDGE
    picard_tol: float = 1e-12
    picard_max: int = 50
    gh_nodes: int = 16
    mesh_nodes: int = 401
    clip: Optional[float] = None
    threads: int = field(default_factory=default_threads)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("backward.solve", f"backward.mode must be one of {MODES}, got {self.mode!r}")
        if self.picard_max < 1 or not self.picard_tol > 0:
            raise ConfigError("backward.implicit_step", "invalid Picard settings")


def implicit_step(
    f_eval: Callable[[np.ndarray], np.ndarray],
    e_y,
    dt: float,
    lipschitz: float,
    tol: float = 1e-12,
    max_iter: int = 50,
):
    """Fixed point of ``y = e_y + f_eval(y) * dt`` by Picard iteration.

    ``e_y`` may be an array (one independent fixed point per entry). The
    iteration is a contraction when ``lipschitz * dt < 1``.
    """
    if lipschitz * dt >= 1.0:
        raise AdmissibilityError("backward.implicit_step", "grid too coarse for implicit step")
    y = e_y
    resid = np.inf
    for _ in range(max_iter):
        y_next = e_y + f_eval(y) * dt
        resid = float(np.max(np.abs(y_next - y), initial=0.0))
        y = y_next
        if resid <= tol:
            return y
    raise NumericalError(
        "backward.implicit_step", f"Picard iteration did not converge (last residual {resid:.3e})"
    )


def check_admissible(model: ModelSpec, grid) -> None:
    """The pre-jump generator is Lipschitz in ``y`` with constant ``2 K``."""
    if 2.0 * model.lipschitz * grid.mesh >= 1.0:
        raise AdmissibilityError("backward.implicit_step", "grid too coarse for implicit step")


def f_bar(model: ModelSpec, t, x, y, z, diag_value):
    """Pre-jump generator with the jump slot filled by ``diag_value - y``."""
    return model.generator(t, x, y, z, diag_value - y)


# ---------------------------------------------------------------------------
# Result containers

@dataclass(eq=False)
class Y1Result:
    """Post-jump family output.

    ``ey[(i, j)]`` / ``z[(i, j)]`` estimate ``E_i[Y_{t_{i+1}}]`` and ``Z_{t_i}``
    for jump index ``j <= i < n``. ``diag[m, i]`` is ``Y1_{t_i}(t_i)`` on path
    ``m``; ``own_y``/``own_z`` hold ``Y1``/``Z1`` along each path's own jump
    index (``nan`` before the jump and on paths without a jump).
    """

    ey: dict
    z: dict
    diag: np.ndarray
    own_y: np.ndarray
    own_z: np.ndarray
    first_step: Optional[dict] = None


@dataclass(eq=False)
class Y0Result:
    """Pre-jump output: per-path values ``y[m, i]``, ``z[m, i]``.

    ``z[:, n]`` repeats ``z[:, n-1]``; the scheme defines no Z at the horizon.
    """

    ey: list
    zfn: list
    y: np.ndarray
    z: np.ndarray
    first_step: Optional[dict] = None


@dataclass(eq=False)
class BackwardFamilySolution:
    model: ModelSpec
    bundle: PathBundle
    family: X1Family
    config: BackwardConfig
    y1: Y1Result
    y0: Y0Result

    @property
    def diag_y1(self) -> np.ndarray:
        return self.y1.diag


@dataclass(eq=False)
class RecombinedSolution:
    """``Y``, ``Z``, ``U`` on every path and grid time, shape ``(M, n+1)``."""

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray


# ---------------------------------------------------------------------------
# Post-jump family

def _one_step_lsmc(cfg: BackwardConfig, x_prev, y_next, dW, dt):
    """Regression estimates of ``E[Y_next | x]`` and ``E[Y_next dW | x] / dt``.

    The Z targets are centred by the fitted conditional mean first. Since
    ``E[dW | x] = 0`` this estimates the same conditional expectation, with
    far less variance (and exactly zero for a deterministic ``Y_next``).
    """
    basis = Basis.centered(cfg.degree, x_prev)
    phi = basis.design(x_prev)
    (fe,) = fit_design(basis, phi, y_next, cfg.ridge, cfg.clip)
    e = evaluate_design(fe, phi)
    z_target = (y_next - e) * dW / dt
    (fz,) = fit_design(basis, phi, z_target, cfg.ridge)
    return fe, fz, e, evaluate_design(fz, phi), z_target


def _family_lsmc(model, bundle, family, cfg, j, own_y, own_z, diag):
    grid = bundle.grid
    n = grid.n
    xs = family.slice(j)
    own = np.nonzero(bundle.jump_index == j)[0]
    y = model.terminal(xs[:, n - j])
    own_y[own, n] = y[own]
    ey_tab, z_tab = {}, {}
    first = None
    for i in range(n, j, -1):
        t, dt = grid.times[i - 1], grid.dt[i - 1]
        x_prev = xs[:, i - 1 - j]
        fe, fz, e, z, z_target = _one_step_lsmc(cfg, x_prev, y, bundle.dW[:, i - 1], dt)
        if i == 1:
            first = {"y": y, "z": z_target}
        y = implicit_step(
            lambda v: model.generator(t, x_prev, v, z, 0.0 * v), e, dt,
            model.lipschitz, cfg.picard_tol, cfg.picard_max,
        )
        ey_tab[(i - 1, j)] = fe
        z_tab[(i - 1, j)] = fz
        own_y[own, i - 1] = y[own]
        own_z[own, i - 1] = z[own]
    diag[:, j] = y
    if j < n:
        own_z[own, n] = own_z[own, n - 1]
    return ey_tab, z_tab, first


def _y1_value(model, cfg, sol, i, x):
    grid = sol.grid
    if i == grid.n:
        return model.terminal(x), None
    t, dt = grid.times[i], grid.dt[i]
    e, z = sol.ey[i](x), sol.z[i](x)
    y = implicit_step(
        lambda v: model.generator(t, x, v, z, 0.0 * v), e, dt,
        model.lipschitz, cfg.picard_tol, cfg.picard_max,
    )
    return y, z


def solve_y1_family(
    model: ModelSpec, bundle: PathBundle, family: X1Family, cfg: BackwardConfig,
    quadrature: Optional[oracle.QuadratureSolution] = None,
) -> Y1Result:
    """Backward implicit scheme for every jump index ``j`` (terminal ``g``, zero
    jump slot in the generator)."""
    check_admissible(model, bundle.grid)
    grid = bundle.grid
    n, M = grid.n, bundle.paths
    diag = np.empty((M, n + 1))
    own_y = np.full((M, n + 1), np.nan)
    own_z = np.full((M, n + 1), np.nan)

    if cfg.mode == "quadrature":
        sol = quadrature or oracle.quadrature_dp(
            model, grid, 0, cfg.gh_nodes, cfg.mesh_nodes,
            picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
        )
        ey = {(i, j): sol.ey[i] for j in range(n + 1) for i in range(j, n)}
        zt = {(i, j): sol.z[i] for j in range(n + 1) for i in range(j, n)}
        xd = family.diagonal()
        xo = family.own_jump()
        jidx = bundle.jump_index
        for i in range(n + 1):
            diag[:, i] = _y1_value(model, cfg, sol, i, xd[:, i])[0]
            live = np.nonzero((jidx >= 0) & (jidx <= i))[0]
            if live.size:
                y, z = _y1_value(model, cfg, sol, i, xo[live, i])
                own_y[live, i] = y
                if z is not None:
                    own_z[live, i] = z
        live = np.nonzero(jidx >= 0)[0]
        own_z[live, n] = own_z[live, n - 1]
        return Y1Result(ey, zt, diag, own_y, own_z, None)

    def work(j):
        return _family_lsmc(model, bundle, family, cfg, j, own_y, own_z, diag)

    threads = max(1, int(cfg.threads))
    if threads == 1:
        results = [work(j) for j in range(n + 1)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n + 1)))
    ey, zt = {}, {}
    for e_tab, z_tab, _ in results:
        ey.update(e_tab)
        zt.update(z_tab)
    return Y1Result(ey, zt, diag, own_y, own_z, results[0][2])


# ---------------------------------------------------------------------------
# Pre-jump equation

def _solve_zero_branch(model, bundle, diag, cfg, quadrature):
    grid = bundle.grid
    n, M = grid.n, bundle.paths
    x0 = bundle.x0_paths
    K = 2.0 * model.lipschitz
    y_all = np.empty((M, n + 1))
    z_all = np.empty((M, n + 1))
    y = model.terminal(x0[:, n])
    y_all[:, n] = y
    ey_fns, z_fns = [None] * n, [None] * n
    first = None
    for i in range(n, 0, -1):
        t, dt = grid.times[i - 1], grid.dt[i - 1]
        x_prev = x0[:, i - 1]
        if quadrature is None:
            fe, fz, e, z, z_target = _one_step_lsmc(cfg, x_prev, y, bundle.dW[:, i - 1], dt)
            if i == 1:
                first = {"y": y, "z": z_target}
        else:
            fe, fz = quadrature.ey[i - 1], quadrature.z[i - 1]
            e, z = fe(x_prev), fz(x_prev)
        d = diag[:, i - 1]
        y = implicit_step(
            lambda v: f_bar(model, t, x_prev, v, z, d), e, dt, K, cfg.picard_tol, cfg.picard_max
        )
        y_all[:, i - 1] = y
        z_all[:, i - 1] = z
        ey_fns[i - 1], z_fns[i - 1] = fe, fz
    z_all[:, n] = z_all[:, n - 1]
    return Y0Result(ey_fns, z_fns, y_all, z_all, first)


def solve_y0(
    model: ModelSpec, bundle: PathBundle, diag_y1: np.ndarray, cfg: BackwardConfig,
    quadrature: Optional[oracle.QuadratureSolution] = None,
) -> Y0Result:
    """Backward implicit scheme for the pre-jump equation, coupled to the
    post-jump family through ``diag_y1``."""
    check_admissible(model, bundle.grid)
    if cfg.mode == "quadrature" and quadrature is None:
        quadrature = oracle.quadrature_dp(
            model, bundle.grid, None, cfg.gh_nodes, cfg.mesh_nodes,
            picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
        )
    return _solve_zero_branch(model, bundle, diag_y1, cfg, quadrature if cfg.mode == "quadrature" else None)


def _exact_post_jump(model: ModelSpec):
    """``(t, x) -> Y1_t`` for models with a closed-form post-jump solution."""
    if model.name == "LIN":
        return lambda t, x: oracle.linear_analytic(model, t, x, True)[0]
    if model.name == "CONST":
        g0 = float(model.params["g0"])
        return lambda t, x: np.full(np.shape(x), g0)
    raise ConfigError("backward.solve_y0_reference", f"model {model.name!r} has no exact post-jump solution")


def exact_diagonal(model: ModelSpec, bundle: PathBundle) -> np.ndarray:
    """True ``Y1_t(t)`` at each grid time along the pre-jump paths."""
    exact = _exact_post_jump(model)
    grid = bundle.grid
    x = bundle.x0_paths
    return np.column_stack([
        exact(grid.times[i], x[:, i] + model.jump_coeff(grid.times[i], x[:, i]))
        for i in range(grid.n + 1)
    ])


def solve_y0_reference(
    model: ModelSpec, bundle: PathBundle, exact_diag: np.ndarray, cfg: BackwardConfig
) -> Y0Result:
    """Intermediary scheme: the pre-jump recursion fed with the exact
    post-jump diagonal instead of the discrete one."""
    exact = _exact_post_jump(model)
    check_admissible(model, bundle.grid)
    quadrature = None
    if cfg.mode == "quadrature":
        grid = bundle.grid
        quadrature = oracle.quadrature_dp(
            model, grid, None, cfg.gh_nodes, cfg.mesh_nodes, injection="instant",
            picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
            post_jump_value=lambda i, x: exact(grid.times[i], x),
        )
    return _solve_zero_branch(model, bundle, exact_diag, cfg, quadrature)


# ---------------------------------------------------------------------------
# Driver and recombination

def solve(model: ModelSpec, bundle: PathBundle, cfg: BackwardConfig) -> BackwardFamilySolution:
    """Forward schemes (if needed), post-jump family, then pre-jump equation."""
    if bundle.x0_paths is None:
        bundle = euler_x0(model, bundle)
    family = euler_x1_family(model, bundle)
    check_admissible(model, bundle.grid)
    q1 = q0 = None
    if cfg.mode == "quadrature":
        q1 = oracle.quadrature_dp(
            model, bundle.grid, 0, cfg.gh_nodes, cfg.mesh_nodes,
            picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
        )
        q0 = oracle.quadrature_dp(
            model, bundle.grid, None, cfg.gh_nodes, cfg.mesh_nodes,
            picard_tol=cfg.picard_tol, picard_max=cfg.picard_max, post_jump=q1,
        )
    y1 = solve_y1_family(model, bundle, family, cfg, q1)
    y0 = solve_y0(model, bundle, y1.diag, cfg, q0)
    return BackwardFamilySolution(model, bundle, family, cfg, y1, y0)


def recombine_yzu(solution: BackwardFamilySolution, t: float):
    """Per-path ``(Y, Z, U)`` at grid time ``t``.

    ``Y`` switches to the post-jump branch on ``{t >= tau}``, ``Z`` on
    ``{t > tau}``; ``U`` is the diagonal gap on ``{t <= tau}`` and 0 after.
    """
    bundle = solution.bundle
    i = locate(bundle.grid, t)
    tau = bundle.taus
    y0, z0 = solution.y0.y[:, i], solution.y0.z[:, i]
    y = np.where(t < tau, y0, solution.y1.own_y[:, i])
    z = np.where(t <= tau, z0, solution.y1.own_z[:, i])
    u = np.where(t <= tau, solution.y1.diag[:, i] - y0, 0.0)
    return y, z, u


def recombine_all(solution: BackwardFamilySolution) -> RecombinedSolution:
    times = solution.bundle.grid.times
    cols = [recombine_yzu(solution, t) for t in times]
    return RecombinedSolution(*(np.column_stack([c[k] for c in cols]) for k in range(3)))


def initial_estimates(solution: BackwardFamilySolution) -> dict:
    """Point estimates of ``Y``, ``Z``, ``U`` at time 0 with Monte Carlo errors.

    The time-0 regressions are on a single state, so each estimate is a
    sample mean of the step-1 targets; its standard error is the sample
    standard deviation over ``sqrt(M)``. Quadrature mode has no sampling
    error at time 0.
    """
    y, z, u = recombine_yzu(solution, 0.0)
    est = {"Y": [float(y.mean()), 0.0], "Z": [float(z.mean()), 0.0], "U": [float(u.mean()), 0.0]}
    f0, f1 = solution.y0.first_step, solution.y1.first_step
    if f0 is not None:
        root_m = np.sqrt(solution.bundle.paths)
        est["Y"][1] = float(f0["y"].std() / root_m)
        est["Z"][1] = float(f0["z"].std() / root_m)
        if f1 is not None:
            est["U"][1] = float((f1["y"] - f0["y"]).std() / root_m)
        else:
            est["U"][1] = est["Y"][1]
    return {k: tuple(v) for k, v in est.items()}
