"""Path-level machinery: the Skorokhod reflection map, Euler simulation of the
factor / reflected state / tangent processes, the exact reflected-BM law, and
barrier hitting-time sampling.

Conventions used throughout:

* A time grid is uniform with the terminal node included.
* The "drop" process D_s = -sqrt(2a)(B1_s - B1_t) - (a - rho)(s - t) drives
  both the reflected state R (R = max(u, running max D) - D) and the barrier
  hitting time tau_u (first node where the running max of D reaches u).
* Reflection is applied at grid nodes (leading to an O(sqrt(dt)) boundary
  bias that the estimator tolerances account for).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .models import DerivedMarket, FactorSpec


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if self.t1 <= self.t0:
            raise ValueError("need t1 > t0")
        if self.n_steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    @classmethod
    def with_target_dt(cls, t0, t1, dt_target):
        n = max(1, int(math.ceil((t1 - t0) / dt_target)))
        return cls(t0, t1, n)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream id; identical (seed, stream) reproduce bit-identical
    draws because the generator is rebuilt from scratch on every call."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng((int(self.seed), int(self.stream)))


@dataclass
class PathBundle:
    """Loose container for simulated per-path arrays, all shaped
    (n_paths, n_nodes) and aligned on `grid`.  Only `grid` is mandatory."""

    grid: TimeGrid
    factor: np.ndarray | None = None
    reflected: np.ndarray | None = None
    local_time: np.ndarray | None = None
    tangent: np.ndarray | None = None
    benchmark: np.ndarray | None = None
    wealth: np.ndarray | None = None
    injection: np.ndarray | None = None

    def check(self, atol=1e-10):
        """Structural invariants: nonnegative reflected state, monotone local
        time and benchmark, and discrete complementarity (the local time only
        moves when the reflected state sits at zero)."""
        if self.reflected is not None:
            if np.min(self.reflected) < -atol:
                raise AssertionError("reflected state went negative")
        if self.local_time is not None:
            dl = np.diff(self.local_time, axis=-1)
            if np.min(dl) < -atol:
                raise AssertionError("local time decreased")
            if self.reflected is not None:
                slack = np.abs(self.reflected[..., 1:] * dl)
                if np.max(slack) > math.sqrt(atol):
                    raise AssertionError("complementarity violated: local time "
                                         "moved while the state was off zero")
        if self.benchmark is not None:
            if np.min(np.diff(self.benchmark, axis=-1)) < -atol:
                raise AssertionError("benchmark path not non-decreasing")
        if self.injection is not None:
            if np.min(np.diff(self.injection, axis=-1)) < -atol:
                raise AssertionError("injection path not non-decreasing")
        return True


def skorokhod_map(free_path, x0):
    """Reflect x0 + free_path at zero from below.

    Returns (reflected, local) with local[k] = max(0, max_{j<=k} -(x0+free[j]))
    and reflected = x0 + free + local >= 0.  The free path must start at 0 and
    may carry leading path axes (reflection runs along the last axis).
    """
    free = np.asarray(free_path, dtype=float)
    if free.shape[-1] == 0:
        raise ValueError("empty path")
    if np.any(free[..., 0] != 0.0):
        raise ValueError("free path must start at 0")
    x0 = float(x0)
    if x0 < 0:
        raise ValueError("initial level x0 must be >= 0")
    running_min = np.minimum.accumulate(x0 + free, axis=-1)
    local = np.maximum(0.0, -running_min)
    reflected = x0 + free + local
    return reflected, local


def brownian_pair_increments(rng, n_paths, n_steps, dt, antithetic=False):
    """Increments of the two independent scalar drivers (B1, B2).

    With antithetic=True, n_paths must be even and the first half of the B1
    draws is mirrored into the second half (B2 is shared by each pair).
    """
    sq = math.sqrt(dt)
    if antithetic:
        if n_paths % 2:
            raise ValueError("antithetic pairing needs an even path count")
        half = n_paths // 2
        db1 = rng.standard_normal((half, n_steps)) * sq
        db2 = rng.standard_normal((half, n_steps)) * sq
        db1 = np.vstack([db1, -db1])
        db2 = np.vstack([db2, db2])
    else:
        db1 = rng.standard_normal((n_paths, n_steps)) * sq
        db2 = rng.standard_normal((n_paths, n_steps)) * sq
    return db1, db2


def factor_steps(factor: FactorSpec, derived: DerivedMarket, m, db1, db2, dt):
    """One Euler step of the factor under the correlated drivers."""
    corr = derived.varrho
    orth = math.sqrt(max(0.0, 1.0 - corr * corr))
    dw = corr * db1 + orth * db2
    return m + factor.mu_z(m) * dt + factor.sigma_z(m) * dw


def tangent_steps(factor: FactorSpec, derived: DerivedMarket, tang, m, db1, db2, dt):
    """One Euler step of the pathwise derivative of the factor in its start
    value; shares the factor path's increments."""
    corr = derived.varrho
    orth = math.sqrt(max(0.0, 1.0 - corr * corr))
    dw = corr * db1 + orth * db2
    return tang * (1.0 + factor.dmu_z(m) * dt + factor.dsigma_z(m) * dw)


def simulate_factor(factor: FactorSpec, derived: DerivedMarket, t, z,
                    grid: TimeGrid, rng: RngSpec, n_paths,
                    increments=None):
    """Full factor paths M started from M(t)=z.  Returns (M, db1, db2) so the
    same increments can drive the tangent or the reflected state."""
    gen = rng.generator() if isinstance(rng, RngSpec) else rng
    if increments is None:
        db1, db2 = brownian_pair_increments(gen, n_paths, grid.n_steps, grid.dt)
    else:
        db1, db2 = increments
    m = np.empty((n_paths, grid.n_steps + 1))
    m[:, 0] = z
    dt = grid.dt
    for k in range(grid.n_steps):
        m[:, k + 1] = factor_steps(factor, derived, m[:, k], db1[:, k], db2[:, k], dt)
    return m, db1, db2


def simulate_tangent(factor: FactorSpec, derived: DerivedMarket,
                     factor_paths, db1, db2, grid: TimeGrid):
    """Pathwise derivative of M in z along already-simulated factor paths."""
    n_paths = factor_paths.shape[0]
    tang = np.empty_like(factor_paths)
    tang[:, 0] = 1.0
    dt = grid.dt
    for k in range(grid.n_steps):
        tang[:, k + 1] = tangent_steps(factor, derived, tang[:, k],
                                       factor_paths[:, k], db1[:, k], db2[:, k], dt)
    return tang


def drop_free_path(derived: DerivedMarket, db1, dt):
    """Cumulative drop process D on the grid (node 0 = 0): the running-max
    driver of reflection and barrier hitting."""
    n_paths, n_steps = db1.shape
    incr = -derived.sqrt_two_alpha * db1 - derived.mu_tilde * dt
    d = np.zeros((n_paths, n_steps + 1))
    np.cumsum(incr, axis=1, out=d[:, 1:])
    return d


BGK_BETA1 = 0.5825971579390107  # -zeta(1/2)/sqrt(2 pi), continuity correction


def simulate_reflected_bm(derived: DerivedMarket, t, u, grid: TimeGrid,
                          rng: RngSpec, n_paths, db1=None,
                          continuity_correction=True):
    """Reflected drifted BM R started at u >= 0, plus its local time (which
    starts at zero).  R = max(u, running max of D) - D.

    The running max observed on a discrete grid undershoots the continuous
    one by about BGK_BETA1 * sigma * sqrt(dt); by default that lift is added
    back (from the first step on), which removes most of the O(sqrt(dt))
    law bias near the boundary."""
    if u < 0:
        raise ValueError("initial level u must be >= 0")
    if db1 is None:
        gen = rng.generator() if isinstance(rng, RngSpec) else rng
        db1 = gen.standard_normal((n_paths, grid.n_steps)) * math.sqrt(grid.dt)
    d = drop_free_path(derived, db1, grid.dt)
    runmax = np.maximum.accumulate(d, axis=1)
    lift = np.zeros(d.shape[1])
    if continuity_correction:
        lift[1:] = BGK_BETA1 * derived.sqrt_two_alpha * math.sqrt(grid.dt)
    local = np.maximum(runmax + lift - u, 0.0)
    reflected = u - d + local
    return reflected, local


def reflected_bm_cdf(u, tau, m, alpha, rho):
    """P(R_tau <= m) for the reflected drifted BM started at u.

    Drift nu = alpha - rho, variance rate 2*alpha.  At alpha = 0 the motion is
    deterministic, R_tau = max(u - rho*tau, 0), and the CDF degenerates to a
    step function.
    """
    m = np.asarray(m, dtype=float)
    if tau < 0:
        raise ValueError("elapsed time must be >= 0")
    nu = alpha - rho
    if alpha == 0.0 or tau == 0.0:
        level = max(u + nu * tau, 0.0) if alpha == 0.0 else u
        out = (m >= level).astype(float) * (m >= 0)
        return out if out.ndim else float(out)
    sig = math.sqrt(2.0 * alpha)
    st = sig * math.sqrt(tau)
    a1 = (m - u - nu * tau) / st
    a2 = (-m - u - nu * tau) / st
    # exp(2 nu m / sig^2) * ndtr(a2) computed in log space to dodge overflow
    with np.errstate(divide="ignore"):
        tilt = np.exp(2.0 * nu * m / (sig * sig) + log_ndtr(a2))
    out = ndtr(a1) - tilt
    out = np.where(m < 0, 0.0, np.clip(out, 0.0, 1.0))
    return out if out.ndim else float(out)


def reflected_bm_density(m, u, tau, alpha, rho, clamp_counter=None):
    """Density psi(m, u, tau) = d/dm P(R_tau <= m) of the reflected drifted BM.

    Tiny negative values from floating-point cancellation (within -1e-12) are
    clamped to 0; `clamp_counter` (a one-element list) is incremented per
    clamped entry.  Genuine negativity raises.
    """
    if alpha <= 0.0:
        raise ValueError("density undefined at alpha = 0 (deterministic motion)")
    if tau <= 0.0:
        raise ValueError("density needs tau > 0")
    m = np.asarray(m, dtype=float)
    nu = alpha - rho
    sig = math.sqrt(2.0 * alpha)
    st = sig * math.sqrt(tau)
    a1 = (m - u - nu * tau) / st
    a2 = (-m - u - nu * tau) / st
    tilt_log = 2.0 * nu * m / (sig * sig)
    phi1 = np.exp(-0.5 * a1 * a1) / math.sqrt(2.0 * math.pi)
    # keep the tilt fused with the Gaussian factor: separately they overflow
    # to inf * 0 for large m under positive drift
    term_cdf = -(2.0 * nu / (sig * sig)) * np.exp(tilt_log + log_ndtr(a2))
    term_phi2 = np.exp(tilt_log - 0.5 * a2 * a2) / (st * math.sqrt(2.0 * math.pi))
    psi = phi1 / st + term_cdf + term_phi2
    neg = psi < 0
    if np.any(neg):
        worst = float(np.min(psi))
        if worst < -1e-12:
            raise AssertionError(f"density negative beyond tolerance: {worst}")
        if clamp_counter is not None:
            clamp_counter[0] += int(np.count_nonzero(neg))
        psi = np.where(neg, 0.0, psi)
    psi = np.where(m < 0, 0.0, psi)
    return psi if psi.ndim else float(psi)


def sample_hitting_time(derived: DerivedMarket, t, u, grid: TimeGrid,
                        rng: RngSpec, n_paths):
    """Samples of tau_u ^ T: the first grid time the running max of the drop
    process reaches u, capped at the grid's terminal time."""
    if u < 0:
        raise ValueError("barrier u must be >= 0")
    if u == 0.0:
        return np.full(n_paths, float(t))
    gen = rng.generator() if isinstance(rng, RngSpec) else rng
    dt = grid.dt
    times = grid.times()
    d = np.zeros(n_paths)
    runmax = np.zeros(n_paths)
    tau = np.full(n_paths, times[-1])
    alive = np.ones(n_paths, dtype=bool)
    drift = -derived.mu_tilde * dt
    vol = derived.sqrt_two_alpha * math.sqrt(dt)
    for k in range(grid.n_steps):
        if not np.any(alive):
            break
        if vol > 0:
            d = d + drift - vol * gen.standard_normal(n_paths)
        else:
            d = d + drift
        np.maximum(runmax, d, out=runmax)
        hit = alive & (runmax >= u)
        tau[hit] = times[k + 1]
        alive &= ~hit
    return tau
