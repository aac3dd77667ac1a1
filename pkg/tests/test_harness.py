import csv
from dataclasses import replace

import numpy as np
import pytest

from conftest import constant_model
from jumpbsde import oracle
from jumpbsde.backward import BackwardConfig, recombine_all, solve
from jumpbsde.errors import ConfigError
from jumpbsde.forward import X1Family, euler_x0, simulate_coupled
from jumpbsde.harness import (
    ERRORS_HEADER, SLOPES_HEADER, backward_error, convergence_study, fit_slope,
    forward_error, forward_error_fixed_jump, reference_states, write_errors_csv, write_slopes_csv,
)
from jumpbsde.timegrid import uniform_grid


def coupled(model, n, M, refine, seed=1):
    c, f = simulate_coupled(uniform_grid(n, model.horizon), M, seed, model.density, refine)
    c, f = euler_x0(model, c), euler_x0(model, f)
    return c, X1Family(model, c), f, X1Family(model, f)


def test_forward_error_self_reference_is_zero(trig):
    c, fc, f, ff = coupled(trig, 8, 500, 1)
    assert forward_error(f, ff, c, fc) == (0.0, 0.0)


def test_forward_error_grid_only_const():
    m = constant_model(b=0.1, sigma=0.2)
    c, fc, f, ff = coupled(m, 8, 500, 16)
    assert forward_error(f, ff, c, fc, grid_only=True)[0] <= 1e-20
    assert forward_error(f, ff, c, fc)[0] > 0


def test_forward_error_checks_coupling(trig):
    c, fc, _, _ = coupled(trig, 8, 500, 4, seed=1)
    _, _, f, ff = coupled(trig, 8, 500, 4, seed=2)
    with pytest.raises(ConfigError):
        forward_error(f, ff, c, fc)
    _, _, f3, ff3 = coupled(trig, 8, 400, 4, seed=1)
    with pytest.raises(ConfigError):
        forward_error(f3, ff3, c, fc)


def test_fixed_jump_error_decays(trig):
    errs = []
    ns = [8, 16, 32, 64, 128]
    for n in ns:
        c, fc, f, ff = coupled(trig, n, 10_000, 16, seed=n)
        errs.append(forward_error_fixed_jump(f, ff, c, fc, 0.5)[0])
    assert fit_slope([1 / n for n in ns], np.sqrt(errs)).slope >= 0.35


def _backward(model, n, M, cfg, refine=4):
    c, fc, f, ff = coupled(model, n, M, refine)
    sol = solve(model, c, cfg)
    return sol, reference_states(f, ff, n)


def test_backward_error_const_zero(const):
    sol, states = _backward(const, 16, 1000, BackwardConfig(mode="lsmc", threads=1))
    be = backward_error(oracle.reference_for(const, 16), recombine_all(sol), const, sol.bundle, states)
    for k in ("err_y", "err_z", "err_u"):
        assert be[k][0] <= 1e-24


def test_backward_error_needs_reference(lin):
    sol, states = _backward(lin, 8, 200, BackwardConfig(mode="quadrature", threads=1))
    with pytest.raises(ConfigError):
        backward_error(None, recombine_all(sol), lin, sol.bundle, states)


def test_err_u_ignores_gaps_after_jump(trig):
    sol, states = _backward(trig, 8, 2000, BackwardConfig(mode="lsmc", threads=1))
    ref = oracle.reference_for(trig, 32)
    rec = recombine_all(sol)
    base = backward_error(ref, rec, trig, sol.bundle, states)["err_u"]
    after = sol.bundle.grid.times[None, :] > sol.bundle.taus[:, None]
    rec2 = replace(rec, u=np.where(after, 123.0, rec.u))
    assert backward_error(ref, rec2, trig, sol.bundle, states)["err_u"] == base


def test_fit_slope_exact_power_law():
    h = np.array([0.5, 0.25, 0.125, 0.0625])
    s = fit_slope(h, 3.0 * h ** 1.5)
    assert s.slope == pytest.approx(1.5, abs=1e-12)
    assert s.ci_lo == pytest.approx(1.5, abs=1e-9) and s.ci_hi == pytest.approx(1.5, abs=1e-9)


def test_fit_slope_interval_covers():
    rng = np.random.default_rng(0)
    h = 2.0 ** -np.arange(3, 8)
    s = fit_slope(h, h * np.exp(0.1 * rng.normal(size=5)))
    assert s.ci_lo < s.slope < s.ci_hi and s.excludes_zero


def test_fit_slope_zero_errors_nan():
    assert np.isnan(fit_slope([0.5, 0.25, 0.125], [1.0, 0.0, 0.5]).slope)


def test_study_needs_three_points(lin):
    with pytest.raises(ConfigError, match="insufficient points for slope"):
        convergence_study(lin, [8, 16], 100, 1, "quadrature")
    with pytest.raises(ConfigError):
        convergence_study(lin, [16, 8, 32], 100, 1, "quadrature")


def test_study_deterministic_and_csv(tmp_path, trig):
    kw = dict(M=500, seed=3, mode="lsmc", refine=2, reference_n=64)
    a = convergence_study(trig, [4, 8, 16], **kw)
    b = convergence_study(trig, [4, 8, 16], **kw)
    assert a.rows == b.rows and a.slopes == b.slopes
    for r in a.rows:
        assert min(r.err_x, r.err_y, r.err_z, r.err_u) >= 0
    write_errors_csv(a, tmp_path / "e.csv")
    write_slopes_csv(a, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ERRORS_HEADER and len(rows) == 4
    srows = list(csv.reader(open(tmp_path / "s.csv")))
    assert srows[0] == SLOPES_HEADER and [r[2] for r in srows[1:]] == ["err_x", "err_y", "err_z", "err_u"]


def test_study_failure_names_n(trig):
    with pytest.raises(Exception, match="n=2"):
        convergence_study(trig, [2, 4, 8], 100, 1, "lsmc", reference_n=32)


@pytest.mark.slow
def test_lin_study_err_y_slope_band(lin):
    rep = convergence_study(lin, [8, 16, 32, 64, 128], 50_000, 7, "quadrature", refine=2)
    assert 0.7 <= rep.slopes["err_y"].slope <= 2.2


@pytest.mark.slow
def test_errors_decrease_in_n(trig):
    rep = convergence_study(trig, [8, 16, 32, 64], 10_000, 5, "lsmc", refine=8)
    for col, se in (("err_x", "se_x"), ("err_y", "se_y"), ("err_u", "se_u")):
        e, s = rep.column(col), rep.column(se)
        assert np.all(e[1:] <= e[:-1] + 2 * np.hypot(s[1:], s[:-1])), col
