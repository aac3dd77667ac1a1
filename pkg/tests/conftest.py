import numpy as np
import pytest

from jumpbsde.model import ModelSpec, builtin_model, exponential_density
from jumpbsde.timegrid import uniform_grid
from jumpbsde.forward import euler_x0, simulate_increments


def constant_model(b=0.1, sigma=0.2, beta=0.0, x0=0.0, generator=None, terminal=None, lipschitz=0.0):
    """Constant-coefficient forward model with a user-supplied backward part."""
    return ModelSpec(
        drift=lambda t, x: np.full_like(x, b),
        diffusion=lambda t, x: np.full_like(x, sigma),
        jump_coeff=lambda t, x: np.full_like(x, beta),
        terminal=terminal or (lambda x: np.sin(x)),
        generator=generator or (lambda t, x, y, z, u: np.zeros(np.broadcast(x, y, z, u).shape)),
        horizon=1.0,
        x0=x0,
        density=exponential_density(1.0),
        lipschitz=lipschitz,
        drift_bound=abs(b),
        diffusion_bound=abs(sigma),
        jump_bound=abs(beta),
    )


def paths(model, n, M, seed=1, refine=1):
    grid = uniform_grid(n, model.horizon)
    return euler_x0(model, simulate_increments(grid, M, seed, model.density, refine))


@pytest.fixture
def lin():
    return builtin_model("LIN")


@pytest.fixture
def trig():
    return builtin_model("TRIG")


@pytest.fixture
def const():
    return builtin_model("CONST")
