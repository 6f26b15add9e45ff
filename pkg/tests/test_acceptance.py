"""Acceptance gate: twelve numbered end-to-end criteria, each printing one
pass/fail line.  Tolerances are pinned here and must not be loosened; a
failing criterion means the implementation (not the gate) needs work.

Run with `pytest -s tests/test_acceptance.py` to see the lines as they print.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from benchtrack.dual_mc import McConfig, h_mc, h_u_mc, xi_mc
from benchtrack.dual_pde import SolverConfig, solve_dual
from benchtrack.gbm import (FIGURE_SWEEPS, GbmSolution, figure_trends,
                            xi_rate_form, xi_tracking)
from benchtrack.models import (BenchmarkSpec, FactorSpec, GbmIndexSpec,
                               MarketParams, Scenario, ValidationError,
                               derive_market)
from benchtrack.paths import (RngSpec, TimeGrid, reflected_bm_cdf,
                              reflected_bm_density, simulate_reflected_bm)
from benchtrack.primal import PrimalSolution
from benchtrack.tracker import (StrategySpec, evaluate_strategy,
                                minimality_oracle, superhedge_check)


def _report(num, desc, ok, detail=""):
    tail = f"  [{detail}]" if detail else ""
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {desc}{tail}")
    assert ok, f"criterion {num}: {desc}{tail}"


# -- shared scenarios ---------------------------------------------------------


def flat_scenario():
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]),
                          rho=0.5, horizon=1.0)
    factor = FactorSpec.constant(gamma=np.array([1.0]), z0=1.0)
    return Scenario(market=market, factor=factor,
                    bench=BenchmarkSpec.constant(level=0.6))


def ou_scenario():
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]),
                          rho=0.5, horizon=1.0)
    factor = FactorSpec.ou(gamma=np.array([1.0]), z0=0.5, speed=1.2,
                           mean=0.8, vol=0.35)
    bench = BenchmarkSpec.logistic(base=0.3, scale=0.8, steep=1.4)
    return Scenario(market=market, factor=factor, bench=bench)


@pytest.fixture(scope="module")
def flat_primal():
    field = solve_dual(flat_scenario(),
                       SolverConfig(n_u=241, u_max=10.0, max_saved=101))
    return PrimalSolution(field)


@pytest.fixture(scope="module")
def ou_primal():
    field = solve_dual(ou_scenario(),
                       SolverConfig(n_u=240, n_z=160, u_max=10.0,
                                    max_saved=101))
    return PrimalSolution(field)


# -- criterion 1: reflected-state law ----------------------------------------


def test_criterion_01_reflected_law():
    t_start = time.monotonic()
    alpha, rho, u0, tau = 0.5, 0.0, 0.3, 1.0
    market = MarketParams(mu=np.array([1.0]), sigma=np.array([[1.0]]),
                          rho=rho, horizon=tau)
    der = derive_market(market, FactorSpec.constant(gamma=np.array([1.0]),
                                                    z0=1.0))
    assert der.alpha == pytest.approx(alpha, abs=1e-14)

    n_total, n_chunk = 100_000, 10_000
    grid = TimeGrid(0.0, tau, 1000)
    finals = np.empty(n_total)
    for k in range(n_total // n_chunk):
        refl, _ = simulate_reflected_bm(der, 0.0, u0, grid,
                                        RngSpec(seed=20_260, stream=k),
                                        n_chunk)
        finals[k * n_chunk:(k + 1) * n_chunk] = refl[:, -1]
        del refl

    probs = np.linspace(0.05, 0.95, 10)
    quantiles = [brentq(lambda m: reflected_bm_cdf(u0, tau, m, alpha, rho) - p,
                        1e-9, 30.0) for p in probs]
    finals.sort()
    emp = np.searchsorted(finals, quantiles, side="right") / n_total
    max_err = float(np.max(np.abs(emp - probs)))
    elapsed = time.monotonic() - t_start
    _report(1, "simulated reflected-state law matches the exact distribution",
            max_err <= 0.01 and elapsed <= 60.0,
            f"max CDF error {max_err:.4f} (cap 0.01), {elapsed:.1f}s of 60s")


# -- criterion 2: density normalization ---------------------------------------


def test_criterion_02_density_normalization():
    alpha, rho = 0.5, 0.0
    worst = 0.0
    for u in (0.0, 0.3, 1.0):
        for tau in (0.25, 1.0, 4.0):
            total, _ = quad(
                lambda m: reflected_bm_density(m, u, tau, alpha, rho),
                0.0, np.inf, limit=200)
            worst = max(worst, abs(total - 1.0))
    _report(2, "reflected-state density integrates to one on 9 (u, tau) pairs",
            worst <= 1e-6, f"max |integral - 1| = {worst:.2e} (cap 1e-6)")


# -- criterion 3: the two dual routes agree -----------------------------------


def test_criterion_03_dual_equivalence(flat_primal, ou_primal):
    t_start = time.monotonic()
    cfg = McConfig(n_paths=40_000, dt_cap=1e-3, antithetic=True, seed=1)
    probes_flat = [(t, 1.0, u) for t in (0.0, 0.3, 0.6)
                   for u in (0.25, 0.75, 1.5)] + [(0.0, 1.0, 3.0)]
    probes_ou = [(t, z, u) for t in (0.0, 0.4) for z in (0.45, 0.65)
                 for u in (0.3, 1.0)] + [(0.2, 0.55, 0.6), (0.6, 0.5, 0.4)]
    assert len(probes_flat) == 10 and len(probes_ou) == 10

    worst_ratio, checked = 0.0, 0
    for primal, probes in ((flat_primal, probes_flat), (ou_primal, probes_ou)):
        scn = primal.scn
        for t, z, u in probes:
            mc = h_mc(scn, t, z, u, cfg)
            fd = primal.field.probe("h", t, z, u)
            tol = max(3.0 * mc.std_error, 0.02 * abs(fd) + 5e-4)
            worst_ratio = max(worst_ratio, abs(fd - mc.value) / tol)
            checked += 1
    elapsed = time.monotonic() - t_start
    _report(3, "gridded and simulated dual values agree at 20 probes",
            worst_ratio <= 1.0 and checked == 20 and elapsed <= 300.0,
            f"worst error/tolerance {worst_ratio:.3f} (cap 1), "
            f"{elapsed:.1f}s of 300s")


# -- criterion 4: wall condition ----------------------------------------------


def test_criterion_04_wall_condition(flat_primal, ou_primal):
    # the simulated wall slope is zero with zero variance by construction
    cfg = McConfig(n_paths=2000, dt_cap=2e-3, antithetic=True, seed=2)
    exact_zero = True
    for scn, zs in ((flat_scenario(), (1.0,)), (ou_scenario(), (0.5, 0.6))):
        for t in (0.0, 0.4):
            for z in zs:
                est = h_u_mc(scn, t, z, 0.0, cfg)
                exact_zero &= (est.value == 0.0 and est.std_error == 0.0)

    # recovered marginal value of cash at zero cushion stays pinned at one
    lo, hi = np.inf, -np.inf
    for t in (0.0, 0.2, 0.4, 0.6, 0.8):
        w = flat_primal.wall_marginal_value(t, 1.0)
        lo, hi = min(lo, w), max(hi, w)
    for t in (0.0, 0.3, 0.6):
        for z in (0.45, 0.55, 0.65):
            w = ou_primal.wall_marginal_value(t, z)
            lo, hi = min(lo, w), max(hi, w)
    ok = exact_zero and 0.99 <= lo and hi <= 1.01
    _report(4, "reflecting-wall condition: zero simulated slope, unit "
               "marginal value of cash",
            ok, f"marginal value range [{lo:.4f}, {hi:.4f}] in [0.99, 1.01]")


# -- criterion 5: value-function shape ----------------------------------------


def test_criterion_05_value_shape(ou_primal, flat_primal):
    rng = np.random.default_rng(5)

    # Dual convexity: second differences in y stay above -1e-8 on a uniform
    # y-grid.  The dual is stored on depth knots u_k (y_k = e^{-u_k}); the
    # grid values come from y-linear interpolation of the knot values, which
    # preserves convexity exactly, so the floor tests the solved data itself
    # rather than change-of-variable wiggle in a smoothing evaluator.
    def min_second(field, rho, t, z):
        u = field.u_nodes
        mask = u <= 4.5
        yk = np.exp(-u[mask])[::-1]
        vk = np.array([math.exp(rho * t) * field.probe("h", t, z, float(uu))
                       for uu in u[mask]])[::-1]
        vh = np.interp(np.linspace(0.05, 1.0, 60), yk, vk)
        return float(np.min(np.diff(vh, 2)))

    min_sd = min(min_second(ou_primal.field, 0.5, t, z)
                 for t, z in ((0.0, 0.5), (0.3, 0.6), (0.6, 0.45)))
    min_sd = min(min_sd, min(min_second(flat_primal.field, 0.5, t, 1.0)
                             for t in (0.0, 0.3, 0.6)))

    # slope bounds and the 1-Lipschitz property on 1000 random pairs
    slope_ok, lipschitz_ok = True, True
    for _ in range(1000):
        t = float(rng.uniform(0.0, 0.9))
        z = float(rng.uniform(0.45, 0.7))
        xi = ou_primal.xi(t, z)
        x1, x2 = sorted(rng.uniform(0.0, 0.95 * xi, size=2))
        vx = ou_primal.v_x(t, z, x1)
        slope_ok &= 0.0 <= vx <= 1.0
        if x2 > x1:
            gap = abs(ou_primal.primal_value(t, z, x2)
                      - ou_primal.primal_value(t, z, x1))
            lipschitz_ok &= gap <= (x2 - x1) * (1.0 + 1e-9)
    ok = (min_sd >= -1e-8) and slope_ok and lipschitz_ok
    _report(5, "value shape: convex dual, slope in [0, 1], 1-Lipschitz value",
            ok, f"min y-second-difference {min_sd:.2e} (floor -1e-8)")


# -- criterion 6: primal equation residual -------------------------------------


def test_criterion_06_hjb_residual(flat_primal, ou_primal):
    worst, n = 0.0, 0
    for t in (0.05, 0.25, 0.45, 0.65, 0.85):
        for frac in (0.15, 0.3, 0.5, 0.7, 0.85):
            xi = flat_primal.xi(t, 1.0)
            worst = max(worst, abs(flat_primal.hjb_residual(
                t, 1.0, frac * xi, relative=True)))
            n += 1
    for t, z in ((0.05, 0.5), (0.25, 0.6), (0.45, 0.45), (0.65, 0.55),
                 (0.85, 0.65)):
        for frac in (0.15, 0.3, 0.5, 0.7, 0.85):
            xi = ou_primal.xi(t, z)
            worst = max(worst, abs(ou_primal.hjb_residual(
                t, z, frac * xi, relative=True)))
            n += 1
    _report(6, "primal equation residual small at 50 interior probes",
            worst <= 5e-2 and n == 50,
            f"worst relative residual {worst:.4f} (cap 0.05)")


# -- criterion 7: deterministic-index feedback optimality ----------------------


def test_criterion_07_sigma0_feedback_optimality():
    t_start = time.monotonic()
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]), rho=2.0)
    index = GbmIndexSpec(1.0, 0.0, 1.0)
    scn = Scenario.from_index(market, index, gamma=np.array([1.0]))
    sol = GbmSolution.solve(market, index, np.array([1.0]))
    spec_opt = StrategySpec.closed_form_gbm(sol)

    details, ok = [], True
    opt_means = {}
    for x0 in (0.5, 1.0):
        rep = evaluate_strategy(spec_opt, scn, x0, dt=1e-3, n_paths=100_000,
                                seed=7)
        want = -sol.value_inf(1.0, x0)
        tol = 3.0 * rep.std_error + 0.03 * want
        ok &= abs(rep.mean - want) <= tol
        opt_means[x0] = (rep.mean, rep.std_error)
        details.append(f"x0={x0}: {rep.mean:.4f} vs {want:.4f} "
                       f"(tol {tol:.4f})")

    # constant-position competitors must not beat the feedback rule
    for theta in (0.0, 0.3, 0.8):
        rep = evaluate_strategy(StrategySpec.constant(np.array([theta])),
                                scn, 0.5, dt=1e-3, n_paths=100_000, seed=7)
        mean_opt, se_opt = opt_means[0.5]
        allowed = mean_opt - 3.0 * (rep.std_error + se_opt)
        ok &= rep.mean >= allowed
        details.append(f"const {theta}: {rep.mean:.4f} >= {allowed:.4f}")
    elapsed = time.monotonic() - t_start
    ok &= elapsed <= 300.0
    _report(7, "deterministic-index feedback rule achieves the model cost, "
               "competitors do not beat it",
            ok, "; ".join(details) + f"; {elapsed:.1f}s of 300s")


# -- criterion 8: stochastic-index closed forms --------------------------------


def test_criterion_08_closed_form_stationary():
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]), rho=2.0)
    index = GbmIndexSpec(1.0, 0.25, 1.0)
    sol = GbmSolution.solve(market, index, np.array([1.0]))
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        z = float(rng.uniform(0.2, 3.0))
        x = float(rng.uniform(0.0, 4.0))
        worst = max(worst, abs(sol.stationary_hjb_residual(z, x)))
    resid_ok = worst <= 1e-8

    scn = Scenario.from_index(market, index, gamma=np.array([1.0]))
    x0 = 0.5
    rep = evaluate_strategy(StrategySpec.closed_form_gbm(sol), scn, x0,
                            dt=1e-3, n_paths=20_000, seed=8)
    want = -sol.value_inf(1.0, x0)
    sim_ok = abs(rep.mean - want) <= 0.05 * want
    _report(8, "stochastic-index closed forms: machine-zero stationary "
               "residual and simulated cost within 5%",
            resid_ok and sim_ok,
            f"max residual {worst:.2e} (cap 1e-8); cost {rep.mean:.4f} vs "
            f"{want:.4f}, clamp_count={rep.clamp_count}")


# -- criterion 9: boundary formula cross-check ---------------------------------


def test_criterion_09_boundary_piecewise_formula():
    cfg = McConfig(n_paths=10_000, dt_cap=1e-3, antithetic=True, seed=9)
    cases = [
        # (mu, sigma, sigma_index, rho, mu_index, T, z)
        (0.3, 1.0, 0.25, 0.0825, 0.5, 1.0, 1.0),
        (0.4, 0.8, 0.2, 0.175, 0.3, 1.5, 0.7),
        (0.3, 1.0, 0.25, 0.0825, 0.095, 1.0, 1.0),
    ]
    details, ok = [], True
    for mu, sig, si, rho, mi, horizon, z in cases:
        market = MarketParams(mu=np.array([mu]), sigma=np.array([[sig]]),
                              rho=rho, horizon=horizon)
        index = GbmIndexSpec(mi, si, z)
        scn = Scenario.from_index(market, index, gamma=np.array([1.0]))
        der = scn.derived
        lam = index.tracking_lambda(der)
        k = 2.0 * der.alpha + mi - 2.0 * rho
        assert abs(k - lam) <= 1e-12  # parameter sets sit on the surface
        want = float(xi_rate_form(z, horizon, der.alpha, mi, rho, lam))
        assert abs(want - float(xi_tracking(z, horizon, lam))) <= 1e-12
        est = xi_mc(scn, 0.0, z, cfg)
        gap = abs(est.value - want)
        ok &= gap <= 3.0 * est.std_error
        details.append(f"lam={lam:.3f}: {est.value:.4f} vs {want:.4f} "
                       f"(3se {3 * est.std_error:.4f})")

    # degenerate branch: the growth exponent hits zero exactly when the
    # tracking rate does, the piecewise formula returns zero on both limbs,
    # and the scenario itself is rejected as trivial (nothing to track)
    lam0_rate = xi_rate_form(1.0, 1.0, 0.045, 0.075, 0.0825, 0.0)
    ok &= lam0_rate == 0.0 and xi_tracking(1.0, 1.0, 0.0) == 0.0
    with pytest.raises(ValidationError):
        Scenario.from_index(
            MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]),
                         rho=0.0825, horizon=1.0),
            GbmIndexSpec(0.075, 0.25, 1.0), gamma=np.array([1.0]))
    details.append("degenerate k=lam=0: both formulas 0, scenario rejected")
    _report(9, "simulated boundary matches the piecewise growth formula "
               "on three parameter sets",
            ok, "; ".join(details))


# -- criterion 10: envelope minimality ----------------------------------------


def test_criterion_10_minimality_exhaustive():
    out = minimality_oracle(n_cases=1000)
    ok = out["n_pass"] == out["n_cases"] == 1000 and not out["failures"]
    _report(10, "injection envelope minimal against exhaustive dominating "
                "competitors",
            ok, f"{out['n_pass']}/{out['n_cases']} instances")


# -- criterion 11: figure trends ------------------------------------------------


def test_criterion_11_figure_trends():
    failed = []
    for fig_id in sorted(FIGURE_SWEEPS):
        for name, passed in figure_trends(fig_id):
            if not passed:
                failed.append(f"figure {fig_id}: {name}")
    _report(11, "all figure monotonicity and crossing assertions hold",
            not failed, "; ".join(failed) if failed else "4 figures checked")


# -- criterion 12: superhedge from a doubled boundary ---------------------------


def test_criterion_12_superhedge(flat_primal):
    rep, xi0 = superhedge_check(flat_scenario(), flat_primal,
                                n_paths=20_000, dt=1e-3, seed=12)
    cap = 0.01 * xi0
    ok = rep.mean <= cap and rep.x0 == pytest.approx(2.0 * xi0, rel=1e-9)
    _report(12, "starting from twice the boundary the tracking cost is "
                "negligible",
            ok, f"mean cost {rep.mean:.2e} (cap {cap:.2e}), injecting paths "
                f"{rep.frac_paths_injecting:.2%}, clamp_count="
                f"{rep.clamp_count}, route_gap={rep.route_gap:.1e}")
