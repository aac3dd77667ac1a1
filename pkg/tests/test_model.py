import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from jumpbsde.errors import ConfigError, DomainError
from jumpbsde.model import (
    AFTER_HORIZON, BUILTIN_MODELS, DensityModel, builtin_model, density_from_function,
    exponential_density, intensity, sample_jump_time, sample_jump_times,
)


def test_intensity_examples():
    assert intensity(exponential_density(1.0), 0.4, True) == pytest.approx(1.0, abs=1e-15)
    assert intensity(exponential_density(1.0), 0.4, False) == 0.0
    assert intensity(exponential_density(2.0), 0.7, True) == pytest.approx(2.0, abs=1e-14)


def test_intensity_pathwise_mask():
    lam = intensity(exponential_density(1.0), 0.3, np.array([True, False, True]))
    np.testing.assert_allclose(lam, [1.0, 0.0, 1.0])


def test_intensity_survival_vanished():
    dm = DensityModel(
        density=lambda t: np.where(np.asarray(t) < 0.5, 2.0, 0.0),
        survival=lambda t: np.clip(1.0 - 2.0 * np.asarray(t, dtype=float), 0.0, 1.0),
    )
    with pytest.raises(DomainError, match="survival vanished before horizon"):
        intensity(dm, 0.7, True)


@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_intensity_quotient_identity(rate, t):
    dm = exponential_density(rate)
    assert intensity(dm, t, True) * dm.survival(t) == pytest.approx(dm.density(t), rel=1e-14)


def test_sample_jump_time_examples():
    dm = exponential_density(1.0)
    assert sample_jump_time(dm, 1 - math.exp(-0.5), 1.0) == pytest.approx(0.5, abs=1e-11)
    assert sample_jump_time(dm, 0.99, 1.0) is AFTER_HORIZON
    assert 0 < sample_jump_time(dm, 1e-12, 1.0) < 1e-10


def test_non_integrable_density_rejected():
    with pytest.raises(ConfigError):
        density_from_function(lambda s: 1.0)


def test_density_from_function_matches_exponential():
    dm = density_from_function(lambda s: 2.0 * math.exp(-2.0 * s))
    assert dm.survival(0.3) == pytest.approx(math.exp(-0.6), abs=1e-10)
    assert intensity(dm, 0.3, True) == pytest.approx(2.0, rel=1e-8)


def test_survival_monotone():
    dm = exponential_density(1.3)
    s = dm.survival(np.linspace(0, 1, 101))
    assert np.all(np.diff(s) <= 0)


def test_inverse_cdf_ks_and_after_horizon_mass():
    dm = exponential_density(1.0)
    rng = np.random.default_rng(3)
    u = rng.uniform(size=100_000)
    tau = sample_jump_times(dm, u, 1.0)
    finite = tau[np.isfinite(tau)]
    p = 1 - math.exp(-1.0)
    freq = finite.size / tau.size
    assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / tau.size)
    truncated_cdf = lambda t: (1 - np.exp(-t)) / p  # noqa: E731
    assert stats.kstest(finite, truncated_cdf).pvalue > 0.01


def test_builtin_const_params():
    m = builtin_model("CONST", {"g0": 2.0})
    x = np.linspace(-1, 1, 5)
    np.testing.assert_array_equal(m.terminal(x), 2.0)
    assert np.all(m.generator(0.0, x, x, x, x) == 0)
    assert np.all(m.jump_coeff(0.0, x) == 0)


def test_builtin_lin_defaults():
    m = builtin_model("LIN")
    assert m.params == {"x0": 1.0, "sigma0": 0.5, "beta0": 0.3, "lambda0": 1.0, "T": 1.0}
    assert m.lipschitz == 1.0


def test_builtin_lin_beta_zero():
    m = builtin_model("LIN", {"beta0": 0.0})
    assert np.all(m.jump_coeff(0.3, np.ones(3)) == 0)


def test_builtin_unknown_param_and_model():
    with pytest.raises(ConfigError):
        builtin_model("LIN", {"gamma": 1.0})
    with pytest.raises(ConfigError):
        builtin_model("NOPE")


def test_all_builtins_instantiate():
    for name in BUILTIN_MODELS:
        m = builtin_model(name)
        assert m.name == name
        assert m.horizon == 1.0
