"""Reference solutions that do not go through the regression layer.

``linear_analytic`` is the closed form of the LIN model. ``quadrature_dp``
runs the backward recursions on a fixed state mesh, integrating the Gaussian
one-step Euler transition with Gauss-Hermite quadrature, so conditional
expectations are exact up to quadrature and interpolation error.

This module intentionally shares no code with ``condexp`` or ``backward``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .errors import ConfigError, NumericalError
from .model import ModelSpec
from .timegrid import TimeGrid, uniform_grid

ESCAPE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class MeshFunction:
    """Interpolant on a state mesh with linear extrapolation past both ends.

    ``kind="cubic"`` (not-a-knot spline) is the default; piecewise-linear
    interpolation leaves an O(h^2) bias per layer that accumulates over the
    backward recursion.
    """

    nodes: np.ndarray
    values: np.ndarray
    kind: str = "cubic"

    def __post_init__(self):
        if self.nodes.ndim != 1 or self.nodes.size < 2 or np.any(np.diff(self.nodes) <= 0):
            raise ConfigError("oracle.MeshFunction", "nodes must be strictly increasing")
        if self.kind == "cubic" and self.nodes.size >= 4:
            object.__setattr__(self, "_spline", CubicSpline(self.nodes, self.values, extrapolate=False))
        elif self.kind in ("cubic", "linear"):
            object.__setattr__(self, "_spline", None)
        else:
            raise ConfigError("oracle.MeshFunction", f"unknown interpolation {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        nodes, vals = self.nodes, self.values
        if self._spline is None:
            out = np.interp(x, nodes, vals)
        else:
            out = self._spline(np.clip(x, nodes[0], nodes[-1]))
        lo_slope = (vals[1] - vals[0]) / (nodes[1] - nodes[0])
        hi_slope = (vals[-1] - vals[-2]) / (nodes[-1] - nodes[-2])
        out = np.where(x < nodes[0], vals[0] + lo_slope * (x - nodes[0]), out)
        out = np.where(x > nodes[-1], vals[-1] + hi_slope * (x - nodes[-1]), out)
        return out


# ---------------------------------------------------------------------------
# Closed form for LIN

def _lin_params(model) -> dict:
    params = model.params if isinstance(model, ModelSpec) else model
    if isinstance(model, ModelSpec) and model.name != "LIN":
        raise ConfigError("oracle.linear_analytic", f"no closed form for model {model.name!r}")
    return {k: float(params[k]) for k in ("sigma0", "beta0", "lambda0", "T")}


def linear_analytic(model, t, x, jumped):
    """``(Y, Z, U)`` of the LIN model at time ``t`` and state ``x``.

    Before the jump ``Y = x + beta0 (1 - exp(-lambda0 (T - t)))`` and
    ``U = beta0 exp(-lambda0 (T - t))``; after it ``Y = x`` (the state already
    contains the jump) and ``U = 0``. ``Z = sigma0`` on both branches.
    """
    p = _lin_params(model)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    decay = np.exp(-p["lambda0"] * (p["T"] - t))
    jumped = np.asarray(jumped, dtype=bool)
    y = np.where(jumped, x, x + p["beta0"] * (1.0 - decay))
    z = np.broadcast_to(p["sigma0"], y.shape).astype(float)
    u = np.where(jumped, 0.0, p["beta0"] * decay + 0.0 * x)
    if y.ndim == 0:
        return float(y), float(z), float(u)
    return y, z, u


# ---------------------------------------------------------------------------
# Gauss-Hermite dynamic programming

@dataclass(eq=False)
class QuadratureSolution:
    """Mesh functions of one backward recursion.

    ``ey[i]`` and ``z[i]`` (``i < n``) are the conditional expectations of
    ``Y_{t_{i+1}}`` and ``Y_{t_{i+1}} dW_{i+1} / dt_{i+1}`` given the state at
    ``t_i``. ``y[i]`` is the solution at ``t_i`` as a function of the state
    where that is well defined (``None`` elsewhere).
    """

    grid: TimeGrid
    nodes: np.ndarray
    branch: str
    first: int
    ey: list
    z: list
    y: list
    y_initial: Optional[float] = None
    post_jump: Optional["QuadratureSolution"] = None


def _mesh_nodes(model: ModelSpec, mesh_nodes: int, width: float) -> np.ndarray:
    if mesh_nodes < 3:
        raise ConfigError("oracle.quadrature_dp", "mesh needs at least 3 nodes")
    escape = 2.0 * float(ndtr(-width))
    if escape > ESCAPE_TOL:
        raise ConfigError(
            "oracle.quadrature_dp",
            f"mesh too narrow: Gaussian tail mass {escape:.2e} exceeds {ESCAPE_TOL:g}",
        )
    T = model.horizon
    half = width * model.diffusion_bound * math.sqrt(T) + model.drift_bound * T + model.jump_bound
    half = max(half, 1e-3)
    return np.linspace(model.x0 - half, model.x0 + half, int(mesh_nodes))


def _solve_fixed_point(e, gen, dt, tol, max_iter, origin):
    y = e
    for _ in range(max_iter):
        y_next = e + gen(y) * dt
        if np.max(np.abs(y_next - y), initial=0.0) <= tol:
            return y_next
        y = y_next
    raise NumericalError(origin, "Picard iteration did not converge")


def quadrature_dp(
    model: ModelSpec,
    grid: TimeGrid,
    jump_index: Optional[int] = None,
    gh_nodes: int = 16,
    mesh_nodes: int = 401,
    injection: str = "scheme",
    picard_tol: float = 1e-12,
    picard_max: int = 50,
    width: float = 6.0,
    post_jump: Optional[QuadratureSolution] = None,
    post_jump_value=None,
) -> QuadratureSolution:
    """Backward recursion with exact (quadrature) conditional expectations.

    With ``jump_index = j`` the post-jump recursion runs on layers ``n..j``;
    it does not otherwise depend on ``j``. With ``jump_index = None`` the
    pre-jump recursion runs on all layers, reading the post-jump value at the
    jump state. ``injection="scheme"`` places the jump exactly as the Euler
    scheme does (``x_i + beta(t_{i-1}, x_{i-1})``), which makes the pre-jump
    value at ``t_i`` depend on the previous state too; ``"instant"`` uses the
    continuous-time jump ``x + beta(t_i, x)`` and yields a Markov solution
    (used for fine-grid references).

    ``post_jump_value(i, x)`` overrides the post-jump value read at layer
    ``i``; it is how the intermediary scheme with the exact post-jump solution
    is realised.
    """
    origin = "oracle.quadrature_dp"
    if gh_nodes < 8:
        raise ConfigError(origin, "gh_nodes must be >= 8")
    if injection not in ("scheme", "instant"):
        raise ConfigError(origin, f"unknown injection {injection!r}")
    n = grid.n
    nodes = _mesh_nodes(model, mesh_nodes, width)
    xi, w = hermegauss(int(gh_nodes))
    w = w / w.sum()
    f = model.generator

    def transition(i, x):
        """GH points of the Euler step from ``t_{i-1}`` to ``t_i`` (rows: x)."""
        dt = grid.dt[i - 1]
        t = grid.times[i - 1]
        mean = x + model.drift(t, x) * dt
        return mean[..., None] + (model.diffusion(t, x) * math.sqrt(dt))[..., None] * xi

    def expectations(i, values_next):
        dt = grid.dt[i - 1]
        e = values_next @ w
        z = values_next @ (w * xi) / math.sqrt(dt)
        return e, z

    if jump_index is not None:
        first = int(jump_index)
        if not 0 <= first <= n:
            raise ConfigError(origin, f"jump index {first} outside 0..{n}")
        y = [None] * (n + 1)
        ey = [None] * n
        zz = [None] * n
        y[n] = MeshFunction(nodes, model.terminal(nodes))
        for i in range(n, first, -1):
            t = grid.times[i - 1]
            e, z = expectations(i, y[i](transition(i, nodes)))
            yv = _solve_fixed_point(
                e, lambda v: f(t, nodes, v, z, 0.0 * v), grid.dt[i - 1], picard_tol, picard_max, origin
            )
            ey[i - 1] = MeshFunction(nodes, e)
            zz[i - 1] = MeshFunction(nodes, z)
            y[i - 1] = MeshFunction(nodes, yv)
        return QuadratureSolution(grid, nodes, "post-jump", first, ey, zz, y)

    if post_jump is None and post_jump_value is None:
        post_jump = quadrature_dp(
            model, grid, 0, gh_nodes, mesh_nodes, injection, picard_tol, picard_max, width
        )
    if post_jump_value is None:
        post_jump_value = lambda i, x: post_jump.y[i](x)  # noqa: E731

    def solve_layer(t, x, e, z, diag, dt):
        return _solve_fixed_point(
            e, lambda v: f(t, x, v, z, diag - v), dt, picard_tol, picard_max, origin
        )

    y = [None] * (n + 1)
    ey = [None] * n
    zz = [None] * n
    y[n] = MeshFunction(nodes, model.terminal(nodes))
    for i in range(n, 0, -1):
        pts = transition(i, nodes)
        if i == n:
            vals = model.terminal(pts)
        elif injection == "instant":
            vals = y[i](pts)
        else:
            # value at t_i given (x_{i-1} = node, x_i = pts)
            t_i = grid.times[i]
            jump_state = pts + model.jump_coeff(grid.times[i - 1], nodes)[:, None]
            vals = solve_layer(t_i, pts, ey[i](pts), zz[i](pts), post_jump_value(i, jump_state), grid.dt[i])
        e, z = expectations(i, vals)
        ey[i - 1] = MeshFunction(nodes, e)
        zz[i - 1] = MeshFunction(nodes, z)
        if injection == "instant" or i == 1:
            t = grid.times[i - 1]
            diag = post_jump_value(i - 1, nodes + model.jump_coeff(t, nodes))
            y[i - 1] = MeshFunction(nodes, solve_layer(t, nodes, e, z, diag, grid.dt[i - 1]))

    x0 = np.array([model.x0])
    y_initial = float(y[0](x0)[0])
    return QuadratureSolution(grid, nodes, "pre-jump", 0, ey, zz, y, y_initial, post_jump)


# ---------------------------------------------------------------------------
# Reference providers for the error functionals

class LinearReference:
    """Exact solution functions of the LIN model."""

    def __init__(self, model: ModelSpec):
        _lin_params(model)
        self.model = model

    def y0(self, t, x):
        return linear_analytic(self.model, t, x, False)[0]

    def z0(self, t, x):
        return linear_analytic(self.model, t, x, False)[1]

    def y1(self, t, x):
        return linear_analytic(self.model, t, x, True)[0]

    def z1(self, t, x):
        return linear_analytic(self.model, t, x, True)[1]


class ConstantReference:
    """Exact solution of the CONST model: ``Y = g0``, ``Z = U = 0``."""

    def __init__(self, model: ModelSpec):
        self.g0 = float(model.params["g0"])

    def y0(self, t, x):
        return np.full(np.shape(x), self.g0)

    y1 = y0

    def z0(self, t, x):
        return np.zeros(np.shape(x))

    z1 = z0


class QuadratureReference:
    """Markov (instant-jump) quadrature solution on a fine uniform grid."""

    def __init__(self, model: ModelSpec, n_fine: int, gh_nodes: int = 16, mesh_nodes: int = 401):
        self.grid = uniform_grid(n_fine, model.horizon)
        self.solution = quadrature_dp(
            model, self.grid, None, gh_nodes, mesh_nodes, injection="instant"
        )

    def _index(self, t) -> int:
        k = int(round(float(t) / self.grid.horizon * self.grid.n))
        if abs(self.grid.times[k] - t) > 1e-9:
            raise ConfigError("harness.backward_error", f"time {t} is not on the reference grid")
        return k

    def y0(self, t, x):
        return self.solution.y[self._index(t)](x)

    def z0(self, t, x):
        return self.solution.z[min(self._index(t), self.grid.n - 1)](x)

    def y1(self, t, x):
        return self.solution.post_jump.y[self._index(t)](x)

    def z1(self, t, x):
        return self.solution.post_jump.z[min(self._index(t), self.grid.n - 1)](x)


def reference_for(model: ModelSpec, n_fine: int, gh_nodes: int = 16, mesh_nodes: int = 401):
    """Reference provider used by the backward error functionals."""
    if model.name == "LIN":
        return LinearReference(model)
    if model.name == "CONST":
        return ConstantReference(model)
    if model.name == "TRIG":
        return QuadratureReference(model, n_fine, gh_nodes, mesh_nodes)
    raise ConfigError("harness.backward_error", f"no reference provider for model {model.name!r}")
