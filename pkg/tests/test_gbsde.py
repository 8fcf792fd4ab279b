"""Regularized solution families, K reconstruction, and the report toolkit."""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from gbmlab import gbsde
from gbmlab.gcore import (DomainError, Grid1D, make_gfunction, payoff_driver,
                          preset_driver, regularize)
from gbmlab.pde import (FieldInterpolator, NumericalError, PdeForm,
                        PdeProblem, solve_terminal_pde)
from gbmlab.scenario import VolatilityControl, mean_and_se, simulate_paths

G01 = make_gfunction(0.0, 1.0)
SCHEDULE = (0.2, 0.1, 0.05, 0.025)


def _grid(nx: int = 401) -> Grid1D:
    return Grid1D.default_for(0.0, 1.0, G01, nx=nx)


def _family(driver, schedule=SCHEDULE, *, grid=None, G=G01,
            form=PdeForm.REGULARIZED_BSDE):
    grid = _grid() if grid is None else grid
    return gbsde.solve_gbsde(gbsde.BsdeProblem(grid, driver, G, form), schedule)


def _neg_quadratic_driver():
    return payoff_driver(lambda x: -np.asarray(x, dtype=float) ** 2,
                         lambda x: -2.0 * np.asarray(x, dtype=float),
                         lambda x: np.full_like(np.asarray(x, dtype=float), -2.0),
                         name="neg-quadratic", kinks=())


# ---- solve_gbsde ----

def test_solve_regularized_level_value():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    assert fam.eps_schedule == (0.2, 0.1)
    assert fam.solution(1).value(0.0, 0.0) == pytest.approx(1.01, abs=1e-2)


def test_solve_richardson_constant_h():
    fam = _family(preset_driver("linear-h"))
    u0 = fam.u0_value(0.0, 0.0)
    assert u0 == pytest.approx(1.5, abs=2e-2)
    # each level solves to x^2 + (1 + eps^2)(1 + c)(T - t) up to boundary
    # contamination, so the two-finest-level extrapolation lands on
    # (1 - eps1*eps2)(1 + c)T for the tail (0.05, 0.025)
    assert u0 == pytest.approx(1.498125, abs=1e-10)


def test_solve_u0_matches_direct_degenerate_solve():
    driver = preset_driver("sine-gz")
    fam = _family(driver)
    direct = solve_terminal_pde(
        PdeProblem(_grid(), driver, G01, PdeForm.REGULARIZED_BSDE))
    assert np.max(np.abs(fam.u0[0] - direct.u[0])) <= 2e-2


def test_solve_rejects_bad_schedules():
    quad = preset_driver("quadratic")
    problem = gbsde.BsdeProblem(_grid(), quad, G01, PdeForm.REGULARIZED_BSDE)
    with pytest.raises(DomainError):
        gbsde.solve_gbsde(problem, (0.1,))
    with pytest.raises(DomainError):
        gbsde.solve_gbsde(problem, (0.1, 0.2))
    with pytest.raises(DomainError):
        gbsde.solve_gbsde(problem, (1.2, 0.6))
    with pytest.raises(DomainError):
        gbsde.solve_gbsde(problem, (0.2, 0.0))
    elliptic = gbsde.BsdeProblem(_grid(), quad, make_gfunction(0.5, 1.0),
                                 PdeForm.REGULARIZED_BSDE)
    with pytest.raises(DomainError):
        gbsde.solve_gbsde(elliptic, (0.2, 0.1))


def test_family_diagnostics():
    fam = _family(preset_driver("quadratic"))
    assert len(fam.solutions) == len(SCHEDULE)
    assert fam.diagnostics["terminal_identical"] is True
    deltas = np.asarray(fam.diagnostics["deltas"])
    assert np.all(np.isfinite(deltas))
    assert np.all(np.diff(deltas) < 0.0)
    for sol in fam.solutions:
        assert sol.nt == fam.diagnostics["nt"]


# ---- reconstruct_K ----

def test_k_zero_under_extremal_control():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    ctrl = VolatilityControl.feedback(fam.solution(0), regularize(G01, 0.2))
    bundle = simulate_paths(ctrl, 200, 128, 1.0, seed=3,
                            driver=preset_driver("quadratic"))
    kp = gbsde.reconstruct_K(fam, 0, bundle)
    assert np.max(np.abs(kp.K)) == 0.0


def test_k_constant_sigma_low_control():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    ctrl = VolatilityControl.constant(0.1, regularize(G01, 0.1))
    bundle = simulate_paths(ctrl, 200, 128, 1.0, seed=5)
    kp = gbsde.reconstruct_K(fam, 1, bundle, x0=0.0)
    assert np.all(kp.K[:, 0] == 0.0)
    # a = 2 everywhere, so dK = (eps^2 - (1 + eps^2)) dt = -dt exactly
    assert np.max(np.abs(kp.K_T + 1.0)) <= 1e-10
    assert np.all(np.diff(kp.K, axis=1) <= 1e-10)


def test_k_flags_raised_increment():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    ctrl = VolatilityControl.constant(0.5, regularize(G01, 0.2))
    bundle = simulate_paths(ctrl, 50, 64, 1.0, seed=2)
    outside = dataclasses.replace(bundle, sigma=np.full(64, 2.0))
    with pytest.raises(NumericalError):
        gbsde.reconstruct_K(fam, 0, outside, x0=0.0)


def test_k_terminal_mean_under_extremal_control():
    driver = preset_driver("smooth-bump")
    fam = _family(driver, (0.2, 0.1))
    ctrl = VolatilityControl.feedback(fam.solution(0), regularize(G01, 0.2))
    bundle = simulate_paths(ctrl, 4000, 256, 1.0, seed=0, driver=driver)
    kp = gbsde.reconstruct_K(fam, 0, bundle)
    assert np.all(np.diff(kp.K, axis=1) <= 1e-10)
    mean, se = mean_and_se(kp.K_T)
    assert abs(mean) <= 3.0 * se + 1e-2


def test_value_field_matches_interpolation_along_paths():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    sol = fam.solution(0)
    ctrl = VolatilityControl.feedback(sol, regularize(G01, 0.2))
    bundle = simulate_paths(ctrl, 200, 128, 1.0, seed=3,
                            driver=preset_driver("quadratic"))
    interp = FieldInterpolator(sol)
    for k in range(0, bundle.n_steps + 1, 16):
        t = bundle.times[k]
        xk = np.clip(bundle.x_paths[:, k], sol.xs[0], sol.xs[-1])
        level = min(np.searchsorted(sol.ts, t, side="right") - 1,
                    len(sol.ts) - 1)
        manual = np.interp(xk, sol.xs, sol.u[level])
        assert np.max(np.abs(interp.u_at(t, xk) - manual)) <= 1e-10


# ---- convergence_report ----

def test_convergence_quadratic_closed_form():
    fam = _family(preset_driver("linear-h"))
    report = gbsde.convergence_report(fam)
    for eps1, eps2, delta, _bound, _ratio in report.rows:
        assert delta == pytest.approx((eps1 ** 2 - eps2 ** 2) * 1.5, abs=1e-10)
    assert not report.any_violation


def test_convergence_bump_ratios():
    fam = _family(preset_driver("smooth-bump"))
    report = gbsde.convergence_report(fam)
    deltas = [row[2] for row in report.rows]
    for a, b in zip(deltas, deltas[1:]):
        assert 0.3 <= b / a <= 0.8
    assert not report.any_violation


def test_convergence_needs_three_levels():
    fam = _family(preset_driver("quadratic"), (0.2, 0.1))
    with pytest.raises(DomainError):
        gbsde.convergence_report(fam)


# ---- curvature and semiconvexity scans ----

def test_scan_quadratic():
    scan = gbsde.second_derivative_scan(_family(preset_driver("quadratic")))
    assert scan.eps == SCHEDULE
    for m in scan.min_uxx:
        assert m == pytest.approx(2.0, abs=1e-4)
    assert scan.bounded


def test_scan_negative_quadratic():
    scan = gbsde.second_derivative_scan(_family(_neg_quadratic_driver()))
    for m in scan.min_uxx:
        assert m == pytest.approx(-2.0, abs=1e-4)
    assert scan.bounded


def test_scan_bump_uniform_across_levels():
    scan = gbsde.second_derivative_scan(_family(preset_driver("sine-gz")))
    mags = np.abs(np.asarray(scan.min_uxx))
    assert scan.bounded
    assert np.max(mags) < 2.0 * np.min(mags)


def test_semiconvexity_quadratic():
    report = gbsde.semiconvexity_scan(
        gbsde.BsdeProblem(_grid(), preset_driver("quadratic"), G01,
                          PdeForm.MARKOVIAN_FBSDE))
    assert report.C == 0.0
    assert report.violations == 0
    assert report.min_second_diff >= 0.0


def test_semiconvexity_smoothed_abs_stable_under_refinement():
    driver = preset_driver("abs", {"smoothing": 0.1})
    G11 = make_gfunction(1.0, 1.0)
    coarse = gbsde.semiconvexity_scan(
        gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 281, 1.0), driver, G11,
                          PdeForm.MARKOVIAN_FBSDE))
    fine = gbsde.semiconvexity_scan(
        gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 561, 1.0), driver, G11,
                          PdeForm.MARKOVIAN_FBSDE))
    assert coarse.violations == 0 and fine.violations == 0
    assert fine.C <= 2.0 * coarse.C + 1e-12
    assert coarse.C <= 2.0 * fine.C + 1e-12


def test_semiconvexity_convex_kink_degenerate():
    grid = Grid1D(-7.0, 7.0, 281, 1.0)
    report = gbsde.semiconvexity_scan(
        gbsde.BsdeProblem(grid, preset_driver("kinked"), G01,
                          PdeForm.MARKOVIAN_FBSDE))
    # sigma == 0 freezes u at |x|, whose kink gives a +2/dx second difference;
    # the bound is one-sided from below, so the fit stays at zero
    assert report.max_second_diff == pytest.approx(2.0 / grid.dx, rel=1e-10)
    assert report.C <= 1e-10
    assert report.violations == 0


def test_semiconvexity_needs_second_derivatives():
    flat = payoff_driver(lambda x: np.asarray(x, dtype=float) ** 2,
                         lambda x: 2.0 * np.asarray(x, dtype=float),
                         name="no-curvature", kinks=())
    with pytest.raises(DomainError):
        gbsde.semiconvexity_scan(
            gbsde.BsdeProblem(_grid(), flat, G01, PdeForm.MARKOVIAN_FBSDE))


# ---- stability_check ----

def test_stability_identical_problems():
    problem = gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 101, 1.0),
                                preset_driver("quadratic"),
                                regularize(G01, 0.1), PdeForm.REGULARIZED_BSDE)
    report = gbsde.stability_check(problem, problem, p=1.0, refinements=3)
    assert all(row[2] == 0.0 for row in report.rows)
    assert report.stable


def test_stability_constant_shift():
    grid = Grid1D(-7.0, 7.0, 101, 1.0)
    Geps = regularize(G01, 0.1)
    quad = preset_driver("quadratic")
    shifted = dataclasses.replace(
        quad, name="quad-shift",
        phi=lambda x: np.asarray(x, dtype=float) ** 2 + 0.1)
    report = gbsde.stability_check(
        gbsde.BsdeProblem(grid, quad, Geps, PdeForm.REGULARIZED_BSDE),
        gbsde.BsdeProblem(grid, shifted, Geps, PdeForm.REGULARIZED_BSDE),
        p=1.0, refinements=3)
    for _nx, delta, _lhs, rhs, constant in report.rows:
        assert delta == pytest.approx(0.1, abs=1e-12)
        assert rhs == pytest.approx(0.1, abs=1e-14)
        assert constant == pytest.approx(1.0, abs=1e-9)
    assert report.stable


def test_stability_bump_perturbation():
    grid = Grid1D(-7.0, 7.0, 101, 1.0)
    Geps = regularize(G01, 0.1)
    quad = preset_driver("quadratic")
    bump = preset_driver("smooth-bump")
    perturbed = dataclasses.replace(
        quad, name="quad-plus-bump",
        phi=lambda x: np.asarray(x, dtype=float) ** 2 + bump.phi(x),
        phi_x=lambda x: 2.0 * np.asarray(x, dtype=float) + bump.phi_x(x),
        phi_xx=lambda x: 2.0 + bump.phi_xx(x),
        L1=5.0)
    report = gbsde.stability_check(
        gbsde.BsdeProblem(grid, quad, Geps, PdeForm.REGULARIZED_BSDE),
        gbsde.BsdeProblem(grid, perturbed, Geps, PdeForm.REGULARIZED_BSDE),
        p=1.0, refinements=3)
    constants = [row[4] for row in report.rows]
    assert max(constants) < 2.0 * min(constants)
    assert report.stable


def test_stability_rejects_mismatched_inputs():
    Geps = regularize(G01, 0.1)
    quad = preset_driver("quadratic")
    base = gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 101, 1.0), quad, Geps,
                             PdeForm.REGULARIZED_BSDE)
    other_grid = gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 201, 1.0), quad, Geps,
                                   PdeForm.REGULARIZED_BSDE)
    with pytest.raises(DomainError):
        gbsde.stability_check(base, other_grid, p=1.0)
    other_G = gbsde.BsdeProblem(Grid1D(-7.0, 7.0, 101, 1.0), quad,
                                regularize(G01, 0.2),
                                PdeForm.REGULARIZED_BSDE)
    with pytest.raises(DomainError):
        gbsde.stability_check(base, other_G, p=1.0)


# ---- dynamic programming check ----

def test_dp_empty_interval():
    problem = gbsde.BsdeProblem(_grid(), preset_driver("quadratic"), G01,
                                PdeForm.MARKOVIAN_FBSDE)
    assert gbsde.dynamic_programming_check(problem, 0.4, 0.4).residual == 0.0


def test_dp_pure_quadratic():
    problem = gbsde.BsdeProblem(_grid(), preset_driver("quadratic"), G01,
                                PdeForm.MARKOVIAN_FBSDE)
    report = gbsde.dynamic_programming_check(problem, 0.0, 0.5)
    assert report.residual <= 2e-2


def test_dp_linear_h():
    problem = gbsde.BsdeProblem(_grid(), preset_driver("linear-h"),
                                regularize(G01, 0.1), PdeForm.MARKOVIAN_FBSDE)
    report = gbsde.dynamic_programming_check(problem, 0.25, 0.75)
    assert report.residual <= 3e-2


def test_dp_rejections():
    quad = preset_driver("quadratic")
    geometric = dataclasses.replace(
        quad, name="geometric",
        sigma=lambda t, x: np.asarray(x, dtype=float),
        sigma_x=lambda t, x: np.ones_like(np.asarray(x, dtype=float)))
    problem = gbsde.BsdeProblem(_grid(), geometric, G01,
                                PdeForm.MARKOVIAN_FBSDE)
    with pytest.raises(DomainError):
        gbsde.dynamic_programming_check(problem, 0.0, 0.5)
    pure = gbsde.BsdeProblem(_grid(), quad, G01, PdeForm.MARKOVIAN_FBSDE)
    with pytest.raises(DomainError):
        gbsde.dynamic_programming_check(pure, 0.5, 0.25)
    with pytest.raises(DomainError):
        gbsde.dynamic_programming_check(pure, 0.5, 1.5)


# ---- counterexample demo ----

def test_counterexample_bound_values():
    mc = {"n_paths": 2000, "n_steps": 256, "seed": 0}
    report = gbsde.counterexample_demo(1.0, [1.0, 0.01], mc=mc)
    assert report.rows[0][1] == 1.25
    assert report.rows[1][1] == pytest.approx(7.886966806002416, rel=1e-12)


def test_counterexample_slope_and_mc_ratios():
    mc = {"n_paths": 20000, "n_steps": 256, "seed": 0}
    report = gbsde.counterexample_demo(1.0, [1.0, 0.5, 0.25, 0.125], mc=mc)
    assert report.slope == pytest.approx(-0.4, abs=1e-10)
    assert report.slope_ok
    assert report.mc_ok
    for _eps, bound, est, _se, ratio in report.rows:
        assert ratio == est / bound
        assert ratio >= 0.95


def test_counterexample_rejections():
    with pytest.raises(DomainError):
        gbsde.counterexample_demo(1.0, [1.0, 0.5], exponent=-0.6)
    with pytest.raises(DomainError):
        gbsde.counterexample_demo(1.0, [1.0, 0.5], exponent=0.1)
    with pytest.raises(DomainError):
        gbsde.counterexample_demo(1.0, [])
    with pytest.raises(DomainError):
        gbsde.counterexample_demo(1.0, [0.5, 0.0])


# ---- path norms ----

def test_path_norms_unit_integrand():
    unit = simulate_paths(VolatilityControl.constant(1.0, G01), 300, 128, 1.0,
                          seed=11)
    still = simulate_paths(VolatilityControl.constant(0.0, G01), 300, 128, 1.0,
                           seed=11)
    norms = gbsde.path_norms(np.ones(128), 2.0, [unit, still])
    assert norms["h_norm"] == 1.0
    assert norms["m_norm"] == 1.0
    assert norms["consistent"]
    assert len(norms["per_bundle"]) == 2


def test_path_norms_zero_volatility():
    still = simulate_paths(VolatilityControl.constant(0.0, G01), 300, 128, 1.0,
                           seed=11)
    norms = gbsde.path_norms(np.ones(128), 2.0, [still])
    assert norms["h_norm"] == 0.0
    assert norms["m_norm"] == 1.0
    assert norms["consistent"]


def test_path_norms_needs_positive_p():
    unit = simulate_paths(VolatilityControl.constant(1.0, G01), 50, 16, 1.0,
                          seed=1)
    with pytest.raises(DomainError):
        gbsde.path_norms(np.ones(16), 0.0, [unit])


# ---- end-to-end invariants ----

def test_family_monotone_in_payoff():
    lower = payoff_driver(lambda x: np.cos(np.asarray(x, dtype=float)) - 1.0,
                          lambda x: -np.sin(np.asarray(x, dtype=float)),
                          lambda x: -np.cos(np.asarray(x, dtype=float)),
                          name="cos-minus-one", kinks=())
    fam_lo = _family(lower, (0.2, 0.1))
    fam_hi = _family(preset_driver("quadratic"), (0.2, 0.1))
    for lo, hi in zip(fam_lo.solutions, fam_hi.solutions):
        assert np.min(hi.u - lo.u) >= -1e-12
    assert np.min(fam_hi.u0 - fam_lo.u0) >= -1e-12


def test_family_preserves_constants():
    const = payoff_driver(
        lambda x: np.full_like(np.asarray(x, dtype=float), 3.7),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        name="const-3.7", kinks=())
    fam = _family(const, (0.2, 0.1))
    for sol in fam.solutions:
        assert np.all(sol.u == 3.7)
    assert np.all(fam.u0 == 3.7)


# ---- report writers ----

def test_write_csv_types_and_digits(tmp_path):
    path = tmp_path / "table.csv"
    gbsde.write_csv(str(path), ("name", "count", "value", "ok"),
                    [("row-a", 3, 1.0 / 3.0, True)])
    lines = path.read_text().splitlines()
    assert lines[0] == "name,count,value,ok"
    cells = lines[1].split(",")
    assert cells[0] == "row-a"
    assert cells[1] == "3"
    mantissa = cells[2].split("e")[0].split(".")[1]
    assert len(mantissa) == 12
    assert cells[3] == "true"


def test_write_report_summary_and_determinism(tmp_path):
    tables = {"levels": (("eps", "delta"), [(0.2, 0.045), (0.1, 0.01125)])}
    kwargs = dict(experiment="demo", parameters={"T": 1.0},
                  values={"u0": 1.498125}, verdicts={"converged": True},
                  tables=tables)
    first = gbsde.write_report(str(tmp_path / "a"), **kwargs)
    second = gbsde.write_report(str(tmp_path / "b"), **kwargs)
    assert first.endswith("summary.json")
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert set(summary) == {"experiment", "parameters", "values", "verdicts"}
    assert summary["experiment"] == "demo"
    assert summary["verdicts"] == {"converged": True}
    assert (tmp_path / "a" / "levels.csv").exists()
    for name in ("summary.json", "levels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
