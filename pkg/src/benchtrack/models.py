"""Model primitives: market parameters, factor/benchmark coefficient families,
and the derived scalar quantities every solver consumes.

Coefficient functions form a closed registry of named parametric families so
that smoothness and positivity requirements can be checked analytically.  All
types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_SIGMA_CONDITION = 1e12
DISCOUNT_TAIL = 1e-8  # e^{-rho*T_eff} must fall below this in infinite-horizon mode


class ValidationError(ValueError):
    """An input violates a standing model assumption."""


def _as_vector(x, name):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class MarketParams:
    """Tradable-market primitives: drift vector, volatility matrix, discount
    rate, and (optionally) a finite horizon.  horizon=None selects the
    infinite-horizon mode; solvers then truncate at `effective_horizon`."""

    mu: np.ndarray
    sigma: np.ndarray
    rho: float
    horizon: float | None = None

    def __post_init__(self):
        mu = _as_vector(self.mu, "mu")
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho", float(self.rho))
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise ValidationError(f"sigma must be {d}x{d}, got {sigma.shape}")
        cond = np.linalg.cond(sigma)
        if not np.isfinite(cond) or cond > MAX_SIGMA_CONDITION:
            raise ValidationError(
                f"volatility matrix is singular or near-singular (cond={cond:.3g})")
        if self.rho < 0:
            raise ValidationError("discount rate rho must be >= 0")
        if self.horizon is not None:
            object.__setattr__(self, "horizon", float(self.horizon))
            if self.horizon <= 0:
                raise ValidationError("horizon must be > 0 when given")

    @property
    def d(self) -> int:
        return self.mu.shape[0]


def effective_horizon(market: MarketParams) -> float:
    """The run horizon: the declared one, or the smallest whole number of
    time units whose discount factor falls below DISCOUNT_TAIL."""
    if market.horizon is not None:
        return market.horizon
    if market.rho <= 0:
        raise ValidationError("infinite horizon requires rho > 0")
    return float(math.ceil(-math.log(DISCOUNT_TAIL) / market.rho))


FACTOR_FAMILIES = ("constant", "ou", "geometric")


@dataclass(frozen=True)
class FactorSpec:
    """Stochastic factor dZ = mu_Z(Z)dt + sigma_Z(Z)dW^gamma.

    Both coefficients are affine, z -> c0 + c1*z, which covers the three
    built-in families:

      constant    mu_Z = drift,        sigma_Z = vol
      ou          mu_Z = speed*(mean - z), sigma_Z = vol
      geometric   mu_Z = growth*z,     sigma_Z = vol*z   (z0 > 0)

    gamma is the weight vector defining the scalar driver W^gamma = gamma'W;
    it must be a unit vector for W^gamma to be a standard Brownian motion.
    Use the family classmethods rather than the raw constructor.
    """

    family: str
    gamma: np.ndarray
    z0: float
    drift_const: float = 0.0
    drift_slope: float = 0.0
    vol_const: float = 0.0
    vol_slope: float = 0.0

    def __post_init__(self):
        if self.family not in FACTOR_FAMILIES:
            raise ValidationError(
                f"unknown factor family {self.family!r}; known: {FACTOR_FAMILIES}")
        gamma = _as_vector(self.gamma, "gamma")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "z0", float(self.z0))
        if np.any(np.abs(gamma) > 1 + 1e-12):
            raise ValidationError("gamma components must lie in [-1, 1]")
        nrm = float(np.linalg.norm(gamma))
        if abs(nrm - 1.0) > 1e-8:
            raise ValidationError(
                f"gamma must be a unit vector (|gamma|={nrm:.6g}); "
                "W^gamma is a standard Brownian motion only then")
        if self.family == "geometric" and self.z0 <= 0:
            raise ValidationError("geometric factor needs z0 > 0")
        if self.vol_const < 0 or (self.family == "geometric" and self.vol_slope < 0):
            raise ValidationError("volatility coefficients must be >= 0")

    @classmethod
    def constant(cls, gamma, z0, drift=0.0, vol=0.0):
        return cls("constant", gamma, z0, drift_const=drift, vol_const=vol)

    @classmethod
    def ou(cls, gamma, z0, speed, mean, vol):
        if speed < 0:
            raise ValidationError("OU mean-reversion speed must be >= 0")
        return cls("ou", gamma, z0,
                   drift_const=speed * mean, drift_slope=-speed, vol_const=vol)

    @classmethod
    def geometric(cls, gamma, z0, growth, vol):
        return cls("geometric", gamma, z0, drift_slope=growth, vol_slope=vol)

    # Coefficient evaluations; all accept scalars or arrays.
    def mu_z(self, z):
        return self.drift_const + self.drift_slope * np.asarray(z, dtype=float)

    def sigma_z(self, z):
        return self.vol_const + self.vol_slope * np.asarray(z, dtype=float)

    def dmu_z(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.drift_slope)

    def dsigma_z(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.vol_slope)

    @property
    def ou_speed(self):
        return -self.drift_slope

    @property
    def ou_mean(self):
        if self.drift_slope == 0.0:
            return self.z0
        return -self.drift_const / self.drift_slope

    def stationary_std(self):
        """OU stationary standard deviation, used for grid truncation."""
        if self.family != "ou" or self.ou_speed <= 0:
            return None
        return self.vol_const / math.sqrt(2.0 * self.ou_speed)


BENCHMARK_FAMILIES = ("constant", "linear", "logistic")


@dataclass(frozen=True)
class BenchmarkSpec:
    """Benchmark drain rate f and initial level a: the target ratchets up as
    A_t = a + int_0^t f(s, Z_s) ds.

      constant    f = level            (level > 0)
      linear      f = slope * z        (slope > 0; needs a positive factor)
      logistic    f = base + scale/(1 + e^{-steep*z})   (base > 0)
    """

    family: str
    a: float = 0.0
    level: float = 0.0
    slope: float = 0.0
    base: float = 0.0
    scale: float = 0.0
    steep: float = 1.0

    def __post_init__(self):
        if self.family not in BENCHMARK_FAMILIES:
            raise ValidationError(
                f"unknown benchmark family {self.family!r}; known: {BENCHMARK_FAMILIES}")
        if self.a < 0:
            raise ValidationError("initial benchmark level a must be >= 0")
        if self.family == "constant" and self.level <= 0:
            raise ValidationError("constant benchmark needs level > 0")
        if self.family == "linear" and self.slope <= 0:
            raise ValidationError("linear benchmark needs slope > 0")

    @classmethod
    def constant(cls, level, a=0.0):
        return cls("constant", a=a, level=level)

    @classmethod
    def linear(cls, slope, a=0.0):
        return cls("linear", a=a, slope=slope)

    @classmethod
    def logistic(cls, base, scale, steep=1.0, a=0.0):
        return cls("logistic", a=a, base=base, scale=scale, steep=steep)

    def f(self, t, z):
        z = np.asarray(z, dtype=float)
        if self.family == "constant":
            return np.full_like(z, self.level)
        if self.family == "linear":
            return self.slope * z
        return self.base + self.scale / (1.0 + np.exp(-self.steep * z))

    def df_dz(self, t, z):
        z = np.asarray(z, dtype=float)
        if self.family == "constant":
            return np.zeros_like(z)
        if self.family == "linear":
            return np.full_like(z, self.slope)
        s = 1.0 / (1.0 + np.exp(-self.steep * z))
        return self.scale * self.steep * s * (1.0 - s)

    @property
    def depends_on_z(self) -> bool:
        return self.family != "constant"


@dataclass(frozen=True)
class GbmIndexSpec:
    """Geometric Brownian index to track: dI/I = mu_index dt + sigma_index dW^gamma.

    The tracking-mismatch rate lambda = mu_index - sigma_index * gamma'sigma^{-1}mu
    must be nonzero; lambda < 0 makes the tracking problem trivial (the hedged
    index drifts down relative to the portfolio, so zero injections suffice).
    """

    mu_index: float
    sigma_index: float
    z0: float

    def __post_init__(self):
        if self.sigma_index < 0:
            raise ValidationError("sigma_index must be >= 0")
        if self.z0 <= 0:
            raise ValidationError("index level z0 must be > 0")

    def tracking_lambda(self, derived: "DerivedMarket") -> float:
        return self.mu_index - self.sigma_index * derived.kappa

    def factor(self, gamma) -> FactorSpec:
        return FactorSpec.geometric(gamma, self.z0,
                                    growth=self.mu_index, vol=self.sigma_index)

    def benchmark(self, derived: "DerivedMarket") -> BenchmarkSpec:
        lam = self.tracking_lambda(derived)
        if lam == 0.0:
            raise ValidationError("tracking mismatch lambda must be nonzero")
        if lam < 0:
            raise ValidationError(
                "lambda < 0: trivial tracking regime, no benchmark drain to model")
        return BenchmarkSpec.linear(lam, a=self.z0)


@dataclass(frozen=True)
class DerivedMarket:
    """Scalars and vectors derived from (MarketParams, FactorSpec.gamma).

    alpha        = 1/2 mu'(ss')^{-1}mu      squared half Sharpe ratio
    varrho       correlation between the driver of the reflected state and W^gamma
    mu_tilde     = alpha - rho
    kappa        = gamma' sigma^{-1} mu     so phi(z) = sigma_Z(z)*kappa
    merton       = (ss')^{-1} mu
    hedge        = (ss')^{-1} sigma gamma
    index_shift  = (sigma')^{-1} gamma      converts index exposure to tradables
    """

    alpha: float
    varrho: float
    mu_tilde: float
    rho: float
    kappa: float
    merton: np.ndarray
    hedge: np.ndarray
    index_shift: np.ndarray
    b1_independent: bool = False

    @property
    def sqrt_two_alpha(self):
        return math.sqrt(2.0 * self.alpha)

    def phi_of(self, sigma_z_value):
        """phi(z) = sigma_Z(z) * mu'(ss')^{-1} sigma gamma = sigma_Z(z)*kappa."""
        return sigma_z_value * self.kappa


def derive_market(params: MarketParams, factor: FactorSpec) -> DerivedMarket:
    if factor.gamma.shape != params.mu.shape:
        raise ValidationError("gamma and mu must have the same length")
    sigma_inv_mu = np.linalg.solve(params.sigma, params.mu)
    alpha = 0.5 * float(sigma_inv_mu @ sigma_inv_mu)
    norm = float(np.linalg.norm(sigma_inv_mu))
    b1_independent = norm == 0.0
    if b1_independent:
        varrho = 0.0
        kappa = 0.0
    else:
        varrho = float(sigma_inv_mu @ factor.gamma) / norm
        kappa = float(factor.gamma @ sigma_inv_mu)
    if abs(varrho) > 1.0 + 1e-12:
        raise ValidationError(f"correlation varrho out of range: {varrho}")
    varrho = min(1.0, max(-1.0, varrho))
    cov = params.sigma @ params.sigma.T
    merton = np.linalg.solve(cov, params.mu)
    hedge = np.linalg.solve(cov, params.sigma @ factor.gamma)
    index_shift = np.linalg.solve(params.sigma.T, factor.gamma)
    return DerivedMarket(alpha=alpha, varrho=varrho,
                         mu_tilde=alpha - params.rho, rho=params.rho,
                         kappa=kappa, merton=merton, hedge=hedge,
                         index_shift=index_shift, b1_independent=b1_independent)


@dataclass(frozen=True)
class Scenario:
    """One fully-specified problem instance: market + factor + benchmark,
    with the derived quantities precomputed.  `index` is set when the factor
    and benchmark were generated from a GBM index-tracking setup."""

    market: MarketParams
    factor: FactorSpec
    bench: BenchmarkSpec
    index: GbmIndexSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "derived", derive_market(self.market, self.factor))

    @classmethod
    def from_index(cls, market: MarketParams, index: GbmIndexSpec, gamma):
        factor = index.factor(gamma)
        derived = derive_market(market, factor)
        bench = index.benchmark(derived)
        return cls(market, factor, bench, index=index)

    @property
    def horizon(self) -> float:
        return effective_horizon(self.market)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    witness: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.ok]

    def lines(self):
        out = []
        for c in self.checks:
            tag = "PASS" if c.ok else "FAIL"
            msg = f"[{tag}] {c.name}"
            if c.witness:
                msg += f": {c.witness}"
            out.append(msg)
        return out


def default_factor_span(factor: FactorSpec):
    """A z-interval generously covering where the factor lives; used for
    validation sampling and PDE truncation."""
    if factor.family == "geometric":
        return factor.z0 / 8.0, factor.z0 * 8.0
    if factor.family == "ou":
        sd = factor.stationary_std()
        if sd is None or sd == 0.0:
            half = max(1.0, abs(factor.z0))
            return factor.z0 - half, factor.z0 + half
        center = factor.ou_mean
        lo = min(center, factor.z0) - 6.0 * sd
        hi = max(center, factor.z0) + 6.0 * sd
        return lo, hi
    # constant-coefficient family: a ball around z0 wide enough for any
    # reachable drift over moderate horizons
    half = max(1.0, abs(factor.z0)) + abs(factor.drift_const) + factor.vol_const
    return factor.z0 - 6.0 * half, factor.z0 + 6.0 * half


def validate_assumptions(factor: FactorSpec, bench: BenchmarkSpec,
                         grid=None, t_samples=None) -> ValidationReport:
    """Checks the standing assumptions on (factor, benchmark) and reports a
    witness point for every violation.  `grid` overrides the sampled z-range."""
    checks = []
    if grid is None:
        lo, hi = default_factor_span(factor)
        grid = np.linspace(lo, hi, 241)
    else:
        grid = np.asarray(grid, dtype=float)
    if t_samples is None:
        t_samples = np.array([0.0])

    checks.append(CheckResult(
        "factor-family-registered", factor.family in FACTOR_FAMILIES, factor.family))
    nrm = float(np.linalg.norm(factor.gamma))
    checks.append(CheckResult(
        "gamma-unit-norm", abs(nrm - 1.0) <= 1e-8, f"|gamma|={nrm:.12g}"))
    if factor.family == "geometric":
        checks.append(CheckResult("geometric-z0-positive", factor.z0 > 0,
                                  f"z0={factor.z0}"))

    worst = None
    for t in np.atleast_1d(t_samples):
        vals = bench.f(t, grid)
        i = int(np.argmin(vals))
        if worst is None or vals[i] < worst[2]:
            worst = (float(t), float(grid[i]), float(vals[i]))
    ok = worst[2] > 0.0
    witness = (f"min f = {worst[2]:.6g} at (t={worst[0]:.4g}, z={worst[1]:.4g})")
    checks.append(CheckResult("benchmark-rate-positive", ok, witness))

    if bench.family == "linear" and factor.family != "geometric":
        checks.append(CheckResult(
            "linear-benchmark-needs-positive-factor", bool(np.all(grid > 0)),
            f"sampled z-range [{grid[0]:.4g}, {grid[-1]:.4g}] crosses zero"
            if not np.all(grid > 0) else "factor range positive"))

    checks.append(CheckResult("initial-benchmark-nonnegative", bench.a >= 0,
                              f"a={bench.a}"))
    return ValidationReport(tuple(checks))
