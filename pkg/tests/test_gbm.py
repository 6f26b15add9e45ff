"""Exact geometric-index solution: exponent roots, value and portfolio
closed forms, the stationary equation they must satisfy to machine
precision, and the deterministic-index finite-horizon quadrature."""

import math

import numpy as np
import pytest

from benchtrack.gbm import (FIGURE_SWEEPS, GbmSolution, SingularBoundaryError,
                            UnsupportedRegimeError, exp_moment_reflected,
                            figure_sweep, figure_trends, finite_horizon_sigma0,
                            gamma0, solve_gamma2, xi_rate_form, xi_tracking)
from benchtrack.models import (GbmIndexSpec, MarketParams, ValidationError)

# base case: mu=0.3, sigma=1, rho=2, sigma_index=0.25, mu_index=1
GAMMA2_BASE = 0.52530970070507
GAMMA0_BASE = 0.5056242882660837


def base_market(rho=2.0, mu=0.3, sigma=1.0):
    return MarketParams(mu=np.array([mu]), sigma=np.array([[sigma]]), rho=rho)


def base_index(mu_index=1.0, sigma_index=0.25):
    return GbmIndexSpec(mu_index, sigma_index, 1.0)


GAMMA = np.array([1.0])


def test_exponent_root_matches_hand_quadratic():
    # 0.045 g^2 + 1.88 g - 1 = 0, positive root
    g2, g1 = solve_gamma2(base_market(), base_index(), GAMMA)
    hand = (-1.88 + math.sqrt(1.88 ** 2 + 4 * 0.045)) / (2 * 0.045)
    assert abs(g2 - hand) <= 1e-12
    assert abs(g2 - GAMMA2_BASE) <= 1e-12
    assert g1 < 0.0 < g2 < 1.0


def test_exponent_root_ordering_ties_to_lambda():
    # the quadratic at g = 1 evaluates to lam = mu_I - sigma_I kappa;
    # positive lam <=> gamma2 < 1
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    a, kap = sol.derived.alpha, sol.derived.kappa
    b = 2.0 - 0.25 * kap - a
    c = 1.0 - 2.0
    at_one = a + b + c
    assert abs(at_one - sol.lam) <= 1e-12
    assert sol.lam > 0.0 and sol.gamma2 < 1.0


def test_flat_index_exponent():
    g0 = gamma0(base_market(), base_index(), GAMMA)
    assert abs(g0 - GAMMA0_BASE) <= 1e-12
    # explicit formula route
    a, rho, mu_i = 0.045, 2.0, 1.0
    hand = (a - rho + math.sqrt((rho - a) ** 2 + 4 * a * (rho - mu_i))) / (2 * a)
    assert abs(g0 - hand) <= 1e-12


def test_discount_below_index_growth_rejected():
    with pytest.raises(UnsupportedRegimeError):
        solve_gamma2(base_market(rho=0.9), base_index(mu_index=1.0), GAMMA)
    with pytest.raises(UnsupportedRegimeError):
        GbmSolution.solve(base_market(rho=1.0), base_index(mu_index=1.0), GAMMA)


def test_value_closed_form_frozen():
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    assert abs(sol.value_inf(1.0, 1.0) - (-0.4196276514200184)) <= 1e-12
    flat = GbmSolution.solve(base_market(), base_index(sigma_index=0.0), GAMMA)
    assert abs(flat.value_inf(1.0, 0.5) - (-0.6458494864844908)) <= 1e-12
    assert abs(flat.value_inf(1.0, 1.0) - (-0.48122683731290267)) <= 1e-12


def test_minimizer_identity():
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    for z, x in ((1.0, 0.3), (0.6, 1.1), (2.5, 0.02)):
        y = sol.ystar_inf(z, x)
        assert 0.0 < y <= 1.0
        # y* is where the dual slope picks up -x: d/dy vhat = z - y^{g-1} z
        slope = z - y ** (sol.gamma2 - 1.0) * z
        assert abs(slope + x) <= 1e-10 * (1.0 + x)
        # and the primal value is the Legendre transform back
        assert abs(sol.value_inf(z, x) - (sol.vhat_inf(z, y) - (-x) * y)) \
            <= 1e-12 * (1.0 + abs(sol.value_inf(z, x)))


def test_value_homogeneity():
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    for scale in (0.5, 2.0, 7.0):
        assert abs(sol.value_inf(scale * 1.0, scale * 0.4)
                   - scale * sol.value_inf(1.0, 0.4)) <= 1e-12 * scale
        th1 = sol.theta_bar_inf(1.0, 0.4)
        th2 = sol.theta_bar_inf(scale * 1.0, scale * 0.4)
        assert np.allclose(th2, scale * th1, rtol=0, atol=1e-12 * scale)


def test_portfolio_boundary_singularity():
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    with pytest.raises(SingularBoundaryError):
        sol.theta_bar_inf(1.0, 0.0)
    flat = GbmSolution.solve(base_market(), base_index(sigma_index=0.0), GAMMA)
    th = flat.theta_bar_inf(1.0, 0.0)
    assert np.allclose(th, [0.14831271], atol=1e-8)


def test_stationary_equation_residual():
    rng = np.random.default_rng(7)
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    for _ in range(100):
        z = float(rng.uniform(0.2, 3.0))
        x = float(rng.uniform(0.0, 4.0))
        scale = max(1.0, abs(sol.value_inf(z, x)))
        assert abs(sol.stationary_hjb_residual(z, x)) <= 1e-10 * scale


def test_portfolio_maximizes_hamiltonian():
    rng = np.random.default_rng(11)
    sol = GbmSolution.solve(base_market(), base_index(), GAMMA)
    for _ in range(50):
        z = float(rng.uniform(0.2, 3.0))
        x = float(rng.uniform(1e-3, 4.0))
        assert abs(sol.hamiltonian_gap(z, x)) <= 1e-10
        # perturbing the position must not improve the Hamiltonian
        v, v_x, v_xx, _, _, v_xz = sol._derivs(z, x)
        th = sol.theta_bar_inf(z, x)
        si = sol.index.sigma_index

        def ham(tt):
            return (tt @ sol.market.mu * v_x
                    + 0.5 * tt @ (sol.market.sigma @ sol.market.sigma.T) @ tt
                    * v_xx
                    + si * z * (tt @ (sol.market.sigma @ sol.gamma)) * v_xz)

        base = ham(th)
        for bump in (0.05, -0.05):
            assert ham(th + bump) <= base + 1e-12


def test_trivial_regime():
    # sigma_index large enough that the hedged index drifts down: lam < 0
    idx = GbmIndexSpec(0.05, 1.0, 1.0)
    sol = GbmSolution.solve(base_market(), idx, GAMMA)
    assert sol.trivial and sol.lam < 0.0
    assert sol.value_inf(1.0, 0.7) == 0.0
    assert np.allclose(sol.theta_bar_inf(1.0, 0.0), 0.0)
    assert np.allclose(sol.theta_inf(1.0, 0.0),
                       idx.sigma_index * 1.0 * sol.derived.index_shift)
    assert sol.stationary_hjb_residual(1.0, 0.7) == 0.0


def test_boundary_formulas_agree_on_matching_surface():
    # rho = alpha + (mu_I - lam)/2 makes the growth exponent collapse to lam
    z, lam = 1.0, 0.425
    alpha, mu_i, rho = 0.045, 0.5, 0.0825
    taus = np.linspace(0.0, 2.0, 9)
    a = xi_tracking(z, taus, lam)
    b = xi_rate_form(z, taus, alpha, mu_i, rho, lam)
    assert np.allclose(a, b, rtol=0, atol=1e-12)
    # degenerate branch: exponent exactly zero -> linear-in-tau form
    flat = xi_rate_form(z, taus, alpha, mu_i, 0.5 * (2 * alpha + mu_i), lam)
    assert np.allclose(flat, lam * z * taus, rtol=0, atol=1e-12)


def test_boundary_handles_small_rates():
    assert xi_tracking(1.0, 1.0, 0.0) == 0.0
    tiny = xi_tracking(1.0, 1.0, 1e-12)
    assert abs(tiny - 1e-12) <= 1e-24


def test_exp_moment_reflected_limits():
    # tau = 0 collapses to the point mass at u
    assert exp_moment_reflected(0.7, 0.0, 0.045, 0.5) == math.exp(-0.7)
    # value lives in (0, 1]
    for u, tau in ((0.0, 0.5), (1.0, 1.0), (3.0, 0.2)):
        m = exp_moment_reflected(u, tau, 0.045, 0.5)
        assert 0.0 < m <= 1.0
    # monotone decreasing in the start depth
    vals = [exp_moment_reflected(u, 0.8, 0.045, 0.5) for u in (0.0, 0.5, 1.5)]
    assert vals[0] > vals[1] > vals[2]


def test_finite_horizon_quadrature_reaches_stationary_limit():
    # with sigma_index = 0 the integrand decays like e^{-(rho-mu_I)s}; a
    # horizon of 18 leaves a tail below 2e-8, so the time-zero quadrature
    # must match the stationary closed form to quadrature accuracy
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]),
                          rho=2.0, horizon=18.0)
    idx = base_index(sigma_index=0.0)
    flat = GbmSolution.solve(base_market(), idx, GAMMA)
    ys = np.array([0.25, 0.5, 0.9])
    got = finite_horizon_sigma0(market, idx, GAMMA, 0.0, 1.0, ys, n_s=160)
    want = np.array([flat.vhat_inf(1.0, y) for y in ys])
    assert np.allclose(got, want, rtol=2e-5, atol=2e-6), (got, want)


def test_finite_horizon_quadrature_guards():
    market = MarketParams(mu=np.array([0.3]), sigma=np.array([[1.0]]),
                          rho=2.0, horizon=1.0)
    with pytest.raises(ValidationError):
        finite_horizon_sigma0(market, base_index(sigma_index=0.25), GAMMA,
                              0.0, 1.0, [0.5])
    with pytest.raises(ValidationError):
        finite_horizon_sigma0(base_market(), base_index(sigma_index=0.0),
                              GAMMA, 0.0, 1.0, [0.5])
    with pytest.raises(ValidationError):
        finite_horizon_sigma0(market, base_index(sigma_index=0.0), GAMMA,
                              0.0, 1.0, [1.5])


def test_gamma2_parameter_sweeps_vs_hand_quadratic():
    # independent route: build the scalar quadratic coefficients by hand for
    # every sweep entry and compare the positive root
    cases = [("mu_index", pv) for pv in (0.8, 1.0, 1.2)] + \
            [("sigma_index", pv) for pv in (0.1, 0.25, 0.4)] + \
            [("mu", pv) for pv in (0.2, 0.3, 0.4)] + \
            [("sigma", pv) for pv in (0.8, 1.0, 1.2)]
    for pname, pv in cases:
        kw = dict(mu=0.3, sigma=1.0, rho=2.0)
        idx_kw = dict(mu_index=1.0, sigma_index=0.25)
        if pname in kw:
            kw[pname] = pv
        else:
            idx_kw[pname] = pv
        alpha = 0.5 * (kw["mu"] / kw["sigma"]) ** 2
        kappa = kw["mu"] / kw["sigma"]
        a = alpha
        b = kw["rho"] - idx_kw["sigma_index"] * kappa - alpha
        c = idx_kw["mu_index"] - kw["rho"]
        hand = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
        market = base_market(rho=kw["rho"], mu=kw["mu"], sigma=kw["sigma"])
        g2, _ = solve_gamma2(market, base_index(**idx_kw), GAMMA)
        assert abs(g2 - hand) <= 1e-12, (pname, pv, g2, hand)
        assert 0.0 < g2 < 1.0


def test_figure_sweep_table_shape():
    names, rows, flagged = figure_sweep(1, xs=[0.1, 0.5, 1.0])
    assert names == ["x", "param_value", "v", "theta_star"]
    assert rows.shape == (9, 4)
    assert not flagged
    with pytest.raises(ValidationError):
        figure_sweep(99)


def test_figure_trends_all_pass():
    for fig_id in sorted(FIGURE_SWEEPS):
        for name, ok in figure_trends(fig_id):
            assert ok, (fig_id, name)
