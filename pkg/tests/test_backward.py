import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import paths
from jumpbsde import oracle
from jumpbsde.backward import (
    BackwardConfig, check_admissible, exact_diagonal, f_bar, implicit_step,
    initial_estimates, recombine_all, recombine_yzu, solve, solve_y0, solve_y0_reference,
    solve_y1_family,
)
from jumpbsde.errors import AdmissibilityError, ConfigError, NumericalError
from jumpbsde.forward import euler_x1_family
from jumpbsde.model import builtin_model
from jumpbsde.timegrid import locate, uniform_grid

LSMC = BackwardConfig(mode="lsmc", degree=3, threads=1)
QUAD = BackwardConfig(mode="quadrature", threads=1)


def test_implicit_step_examples():
    assert implicit_step(lambda y: 0.0 * y, 1.25, 0.1, 1.0) == 1.25
    assert implicit_step(lambda y: 3.0 + 0.0 * y, 1.0, 0.1, 1.0) == pytest.approx(1.3, abs=1e-15)
    assert implicit_step(lambda y: -y, 1.0, 0.1, 1.0) == pytest.approx(1 / 1.1, abs=1e-12)


def test_implicit_step_vectorised():
    e = np.array([1.0, 2.0, -1.0])
    np.testing.assert_allclose(implicit_step(lambda y: -y, e, 0.1, 1.0), e / 1.1, atol=1e-12)


def test_implicit_step_admissibility():
    with pytest.raises(AdmissibilityError, match="grid too coarse for implicit step"):
        implicit_step(lambda y: -y, 1.0, 0.5, 2.0)


def test_implicit_step_nonconvergence():
    with pytest.raises(NumericalError, match="residual"):
        implicit_step(lambda y: -9.0 * y, 1.0, 0.1, 0.5, max_iter=50)


def test_check_admissible(trig):
    with pytest.raises(AdmissibilityError):
        check_admissible(trig, uniform_grid(2, 1.0))
    check_admissible(trig, uniform_grid(3, 1.0))


def test_f_bar_examples(lin, trig):
    x, y, z = np.array([0.2]), np.array([0.7]), np.array([0.1])
    assert f_bar(lin, 0.3, x, y, z, np.array([1.0]))[0] == pytest.approx(0.3)
    np.testing.assert_array_equal(f_bar(trig, 0.3, x, y, z, y), trig.generator(0.3, x, y, z, 0.0 * y))
    no_u = replace(trig, generator=lambda t, x, y, z, u: 0.5 * np.tanh(y) + 0.3 * z)
    np.testing.assert_array_equal(f_bar(no_u, 0.1, x, y, z, 5.0), f_bar(no_u, 0.1, x, y, z, -2.0))


@pytest.mark.parametrize("cfg", [LSMC, QUAD])
def test_const_family_exact(const, cfg):
    b = paths(const, 16, 1000)
    y1 = solve_y1_family(const, b, euler_x1_family(const, b), cfg)
    assert np.max(np.abs(y1.diag - 1.0)) <= 1e-12
    jumped = b.jump_index >= 0
    assert np.nanmax(np.abs(y1.own_y[jumped] - 1.0)) <= 1e-12
    assert np.nanmax(np.abs(y1.own_z[jumped])) <= 1e-12


def test_lin_family_tracks_state(lin):
    b = paths(lin, 8, 100_000, seed=9)
    fam = euler_x1_family(lin, b)
    y1 = solve_y1_family(lin, b, fam, BackwardConfig(mode="lsmc", degree=1, threads=1))
    # regression noise accumulates to about sigma0 sqrt(T / M) = 0.0016 over the layers
    np.testing.assert_allclose(y1.diag, fam.diagonal(), atol=0.01)
    z = np.array([y1.z[(0, 0)](np.array([lin.x0 + 0.3]))[0]])
    f1 = y1.first_step["z"]
    assert abs(z[0] - 0.5) < 4 * f1.std() / math.sqrt(f1.size)


def test_trig_family_against_quadrature(trig):
    g = uniform_grid(8, 1.0)
    b = paths(trig, 8, 50_000, seed=3)
    y1 = solve_y1_family(trig, b, euler_x1_family(trig, b), LSMC)
    q = oracle.quadrature_dp(trig, g, 0)
    est = y1.diag[0, 0]
    se = y1.first_step["y"].std() / math.sqrt(b.paths)
    assert abs(est - q.y[0](np.array([trig.x0 + trig.jump_coeff(0.0, np.array([trig.x0]))[0]]))[0]) <= 3 * se + 0.01


@pytest.mark.parametrize("cfg", [LSMC, QUAD])
def test_const_zero_branch_exact(const, cfg):
    sol = solve(const, paths(const, 16, 1000), cfg)
    assert np.max(np.abs(sol.y0.y - 1.0)) <= 1e-12
    assert np.max(np.abs(sol.y0.z)) <= 1e-12


@pytest.mark.parametrize("cfg", [LSMC, QUAD])
def test_u_independent_generator_decouples(trig, cfg):
    m = replace(trig, generator=lambda t, x, y, z, u: 0.5 * np.tanh(y) + 0.3 * z)
    b = paths(m, 8, 2000)
    y1 = solve_y1_family(m, b, euler_x1_family(m, b), cfg)
    a = solve_y0(m, b, y1.diag, cfg)
    c = solve_y0(m, b, np.zeros_like(y1.diag), cfg)
    d = solve_y0(m, b, np.random.default_rng(0).normal(size=y1.diag.shape), cfg)
    assert np.array_equal(a.y, c.y) and np.array_equal(a.y, d.y)
    assert np.array_equal(a.z, c.z) and np.array_equal(a.z, d.z)


def test_reference_scheme_lin_and_const(lin, const):
    b = paths(lin, 128, 2000)
    ref = solve_y0_reference(lin, b, exact_diagonal(lin, b), QUAD)
    assert abs(ref.y[0, 0] - 1.1896362) < 0.03
    bc = paths(const, 16, 500)
    sol = solve(const, bc, LSMC)
    ref_c = solve_y0_reference(const, sol.bundle, exact_diagonal(const, sol.bundle), LSMC)
    np.testing.assert_array_equal(ref_c.y, sol.y0.y)
    with pytest.raises(ConfigError):
        solve_y0_reference(builtin_model("TRIG"), b, exact_diagonal(lin, b), QUAD)


def _bundle_with_taus(model, n, M, taus):
    b = paths(model, n, M)
    taus = np.asarray(taus, dtype=float)
    jidx = np.where(np.isfinite(taus), locate(b.grid, np.where(np.isfinite(taus), taus, 0.0)), -1)
    return replace(b, taus=taus, jump_index=jidx)


@pytest.mark.parametrize("cfg", [LSMC, QUAD])
def test_indicator_conventions_on_grid_point(trig, cfg):
    n = 8
    taus = np.tile([0.0, 0.375, 1.0, np.inf], 250)
    b = _bundle_with_taus(trig, n, taus.size, taus)
    sol = solve(trig, b, cfg)
    for i, t in enumerate(b.grid.times):
        y, z, u = recombine_yzu(sol, t)
        for m in range(4):
            tau = taus[m]
            if t < tau:
                assert y[m] == sol.y0.y[m, i]
            else:
                assert y[m] == sol.y1.own_y[m, i]
            if t <= tau:
                assert z[m] == sol.y0.z[m, i]
                assert u[m] == sol.y1.diag[m, i] - sol.y0.y[m, i]
            else:
                assert z[m] == sol.y1.own_z[m, i]
                assert u[m] == 0.0
    # at t = tau on the grid: Y has switched, Z and U have not
    y, z, u = recombine_yzu(sol, 0.375)
    assert y[1] == sol.y1.own_y[1, 3] and z[1] == sol.y0.z[1, 3] and u[1] != 0.0


def test_after_horizon_branch(lin):
    b = _bundle_with_taus(lin, 8, 500, np.full(500, np.inf))
    sol = solve(lin, b, QUAD)
    rec = recombine_all(sol)
    np.testing.assert_array_equal(rec.y, sol.y0.y)
    np.testing.assert_array_equal(rec.u, sol.y1.diag - sol.y0.y)


@pytest.mark.parametrize("cfg", [LSMC, QUAD])
def test_terminal_exactness(trig, cfg):
    b = paths(trig, 8, 3000)
    sol = solve(trig, b, cfg)
    rec = recombine_all(sol)
    x_t = np.where(1.0 < b.taus, b.x0_paths[:, -1], sol.family.own_jump()[:, -1])
    np.testing.assert_array_equal(rec.y[:, -1], np.tanh(x_t))


def test_picard_consistency(trig):
    b = paths(trig, 16, 5000)
    a = solve(trig, b, BackwardConfig(mode="lsmc", picard_tol=1e-12, threads=1))
    c = solve(trig, b, BackwardConfig(mode="lsmc", picard_tol=5e-13, threads=1))
    assert abs(a.y0.y[0, 0] - c.y0.y[0, 0]) < 1e-9


def test_thread_count_bitwise(trig):
    b = paths(trig, 16, 4000)
    a = recombine_all(solve(trig, b, BackwardConfig(mode="lsmc", threads=1)))
    c = recombine_all(solve(trig, b, BackwardConfig(mode="lsmc", threads=4)))
    for k in ("y", "z", "u"):
        assert np.array_equal(getattr(a, k), getattr(c, k), equal_nan=True)


def test_initial_estimates_lin_quadrature(lin):
    est = initial_estimates(solve(lin, paths(lin, 64, 200), QUAD))
    assert abs(est["Y"][0] - 1.1896362) < 5e-3
    assert abs(est["Z"][0] - 0.5) < 1e-10
    assert abs(est["U"][0] - 0.1103638) < 5e-3
    assert est["Y"][1] == 0.0


def test_invalid_mode():
    with pytest.raises(ConfigError):
        BackwardConfig(mode="pde")
