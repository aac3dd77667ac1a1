"""Problem declaration: coefficients, jump-time law and built-in test models.

The jump time is independent of the Brownian motion and has a deterministic
density ``gamma`` on ``[0, inf)``. Under that restriction the intensity is the
deterministic hazard rate ``gamma(t) / S(t)`` before the jump and zero after.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError

Coefficient = Callable[[float, np.ndarray], np.ndarray]
Generator = Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

CDF_TOL = 1e-12


class _AfterHorizon:
    """Sentinel for a jump that happens after the horizon (``tau > T``)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AFTER_HORIZON"

    def __reduce__(self):
        return (_AfterHorizon, ())


AFTER_HORIZON = _AfterHorizon()


def jump_time_value(tau) -> float:
    """Numeric encoding of a jump time; ``AFTER_HORIZON`` maps to ``inf``."""
    return math.inf if tau is AFTER_HORIZON else float(tau)


@dataclass(frozen=True)
class DensityModel:
    """Law of the jump time through its density and survival function.

    Both callables must accept numpy arrays.
    """

    density: Callable[[np.ndarray], np.ndarray]
    survival: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def intensity_rate(self, t):
        """Hazard rate ``gamma(t) / S(t)`` (the intensity of a live path)."""
        return self.density(t) / self.survival(t)


def exponential_density(rate: float) -> DensityModel:
    if not rate > 0:
        raise ConfigError("model.exponential_density", f"rate must be positive, got {rate!r}")
    return DensityModel(
        density=lambda t: rate * np.exp(-rate * np.asarray(t, dtype=float)),
        survival=lambda t: np.exp(-rate * np.asarray(t, dtype=float)),
        label=f"exponential(rate={rate:g})",
    )


def density_from_function(gamma: Callable[[float], float], tol: float = 1e-8) -> DensityModel:
    """Build a density model from a bare density by numerical integration.

    Raises ConfigError if ``gamma`` does not integrate to one.
    """
    with warnings.catch_warnings():
        # divergence is reported below as a ConfigError
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        total, _ = integrate.quad(gamma, 0.0, np.inf, limit=200)
    if not np.isfinite(total) or abs(total - 1.0) > tol:
        raise ConfigError(
            "model.sample_jump_time", f"density is not a probability density (mass {total!r})"
        )

    def survival(t):
        t = np.asarray(t, dtype=float)
        head = np.vectorize(lambda s: integrate.quad(gamma, 0.0, s, limit=200)[0])(t)
        return np.clip(1.0 - head, 0.0, 1.0)

    return DensityModel(density=np.vectorize(gamma, otypes=[float]), survival=survival)


def intensity(dm: DensityModel, t, alive):
    """Compensator rate of the jump indicator at time ``t``.

    ``alive`` may be a boolean array (one entry per path); dead paths get 0.
    """
    t = np.asarray(t, dtype=float)
    surv = np.asarray(dm.survival(t), dtype=float)
    if np.any(surv <= 0.0):
        raise DomainError("model.intensity", "survival vanished before horizon")
    rate = np.asarray(dm.density(t), dtype=float) / surv
    out = np.where(alive, rate, 0.0)
    return float(out) if out.ndim == 0 else out


def sample_jump_time(dm: DensityModel, u: float, horizon: float):
    """Inverse-CDF draw; returns ``AFTER_HORIZON`` when ``u >= 1 - S(T)``."""
    tau = sample_jump_times(dm, np.array([u], dtype=float), horizon)[0]
    return AFTER_HORIZON if math.isinf(tau) else float(tau)


def sample_jump_times(dm: DensityModel, u: np.ndarray, horizon: float) -> np.ndarray:
    """Vectorised inverse CDF by bisection on ``[0, T]``.

    Jumps beyond the horizon are encoded as ``inf``.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("model.sample_jump_time", "uniform variate outside (0, 1)")
    mass = float(dm.cdf(horizon))
    if not np.isfinite(mass):
        raise ConfigError("model.sample_jump_time", "jump-time density is not integrable")
    inside = u < mass
    lo = np.zeros(u.shape)
    hi = np.full(u.shape, float(horizon))
    target = u[inside]
    lo_in, hi_in = lo[inside], hi[inside]
    n_iter = max(1, math.ceil(math.log2(horizon / CDF_TOL)))
    for _ in range(n_iter):
        mid = 0.5 * (lo_in + hi_in)
        below = dm.cdf(mid) < target
        lo_in = np.where(below, mid, lo_in)
        hi_in = np.where(below, hi_in, mid)
    out = np.full(u.shape, np.inf)
    out[inside] = hi_in
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the decoupled forward-backward system with one jump.

    All coefficient callables are vectorised over the state argument(s).
    ``lipschitz`` is the generator's Lipschitz constant in (y, z, u); the
    ``*_bound`` fields bound |b|, |sigma| and |beta| and size the quadrature
    mesh.
    """

    drift: Coefficient
    diffusion: Coefficient
    jump_coeff: Coefficient
    terminal: Callable[[np.ndarray], np.ndarray]
    generator: Generator
    horizon: float
    x0: float
    density: DensityModel
    lipschitz: float = 0.0
    drift_bound: float = 0.0
    diffusion_bound: float = 0.0
    jump_bound: float = 0.0
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("model.ModelSpec", f"horizon must be positive, got {self.horizon!r}")
        if self.lipschitz < 0:
            raise ConfigError("model.ModelSpec", "Lipschitz constant must be nonnegative")


# ---------------------------------------------------------------------------
# Built-in models

def _lin(x0, sigma0, beta0, lambda0, T):
    return ModelSpec(
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: np.full_like(x, sigma0),
        jump_coeff=lambda t, x: np.full_like(x, beta0),
        terminal=lambda x: np.array(x, dtype=float, copy=True),
        generator=lambda t, x, y, z, u: lambda0 * u,
        horizon=T,
        x0=x0,
        density=exponential_density(lambda0),
        lipschitz=lambda0,
        drift_bound=0.0,
        diffusion_bound=abs(sigma0),
        jump_bound=abs(beta0),
    )


def _trig(x0, beta0, lambda0, T):
    def generator(t, x, y, z, u):
        return 0.5 * np.tanh(y) + 0.3 * z + lambda0 * u

    return ModelSpec(
        drift=lambda t, x: 0.1 * np.cos(x),
        diffusion=lambda t, x: 0.2 + 0.1 * np.sin(x),
        jump_coeff=lambda t, x: beta0 * np.cos(x),
        terminal=np.tanh,
        generator=generator,
        horizon=T,
        x0=x0,
        density=exponential_density(lambda0),
        lipschitz=max(0.5, 0.3, lambda0),
        drift_bound=0.1,
        diffusion_bound=0.3,
        jump_bound=abs(beta0),
    )


def _const(x0, b0, sigma0, g0, lambda0, T):
    return ModelSpec(
        drift=lambda t, x: np.full_like(x, b0),
        diffusion=lambda t, x: np.full_like(x, sigma0),
        jump_coeff=lambda t, x: np.zeros_like(x),
        terminal=lambda x: np.full_like(x, g0, dtype=float),
        generator=lambda t, x, y, z, u: np.zeros(np.broadcast(x, y, z, u).shape),
        horizon=T,
        x0=x0,
        density=exponential_density(lambda0),
        lipschitz=0.0,
        drift_bound=abs(b0),
        diffusion_bound=abs(sigma0),
        jump_bound=0.0,
    )


@dataclass(frozen=True)
class BuiltinEntry:
    factory: Callable[..., ModelSpec]
    defaults: Mapping[str, float]
    doc: str


BUILTIN_MODELS: dict[str, BuiltinEntry] = {
    "LIN": BuiltinEntry(
        _lin,
        {"x0": 1.0, "sigma0": 0.5, "beta0": 0.3, "lambda0": 1.0, "T": 1.0},
        "b=0, sigma=sigma0, beta=beta0, g(x)=x, f=lambda0*u, exponential jump time. "
        "Closed-form solution available. g is unbounded, so the bounded-terminal "
        "assumption of the convergence theory does not hold literally.",
    ),
    "TRIG": BuiltinEntry(
        _trig,
        {"x0": 0.5, "beta0": 0.3, "lambda0": 1.0, "T": 1.0},
        "b=0.1cos x, sigma=0.2+0.1sin x, beta=beta0*cos x, g=tanh, "
        "f=0.5tanh(y)+0.3z+lambda0*u, exponential jump time.",
    ),
    "CONST": BuiltinEntry(
        _const,
        {"x0": 0.0, "b0": 0.1, "sigma0": 0.2, "g0": 1.0, "lambda0": 1.0, "T": 1.0},
        "b=b0, sigma=sigma0, beta=0, g=g0, f=0. Exact solution Y=g0, Z=U=0.",
    ),
}


def builtin_model(name: str, params: Mapping[str, float] | None = None) -> ModelSpec:
    """Instantiate a registered test model; missing parameters take defaults."""
    try:
        entry = BUILTIN_MODELS[name]
    except KeyError:
        raise ConfigError(
            "model.builtin_model", f"unknown model {name!r}; known: {sorted(BUILTIN_MODELS)}"
        ) from None
    params = dict(params or {})
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ConfigError(
            "model.builtin_model", f"unknown parameter(s) for {name}: {sorted(unknown)}"
        )
    resolved = {k: float(params.get(k, v)) for k, v in entry.defaults.items()}
    for key, value in resolved.items():
        if not math.isfinite(value):
            raise ConfigError("model.builtin_model", f"parameter {key} must be finite")
    return replace(entry.factory(**resolved), name=name, params=resolved)
