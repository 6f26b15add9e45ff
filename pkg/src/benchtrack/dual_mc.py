"""Monte Carlo estimators of the dual solution h, its partial derivatives,
and the superhedge threshold xi, straight from their probabilistic
representations (discounted functionals of a factor diffusion and a reflected
drifted Brownian motion).

All estimators are pure functions of (inputs, config): the generator is
rebuilt from the config seed on every call, so two calls with the same seed
see identical Brownian increments.  That makes finite-difference cross-checks
common-random-number by construction and output bit-reproducible.

With antithetic=True the mirrored path of draw i is placed right after it, so
per-path output arrays hold adjacent pairs; standard errors come from pair
means.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .models import Scenario
from .paths import BGK_BETA1, TimeGrid

# upper bound on (paths x nodes) elements simulated at once; keeps peak
# memory modest while leaving chunks large enough to vectorize well
_CHUNK_BUDGET = 4_000_000

# discrete monitoring undershoots a Brownian running maximum by
# beta1*sigma*sqrt(dt) on average (Broadie-Glasserman-Kou continuity
# correction); beta1 = -zeta(1/2)/sqrt(2 pi)
_BGK_BETA1 = 0.5825971579390107


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    dt_cap: float = 1e-3
    antithetic: bool = True
    fd_step: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic estimation needs an even path count")
        if not self.fd_step > 0.0:
            raise ValueError("fd_step must be positive")

    def step_for(self, span: float) -> float:
        """dt = dt_cap*span capped at dt_cap (fine steps for short horizons)."""
        return min(self.dt_cap, self.dt_cap * span) if span > 0 else self.dt_cap


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_paths: int
    settings: dict

    def __post_init__(self):
        if not (math.isfinite(self.value) and math.isfinite(self.std_error)):
            raise ValueError("non-finite estimate")
        if self.std_error < 0:
            raise ValueError("negative standard error")


def wall_kernel(t, horizon, alpha, rho):
    """Expected discounted depth-weighted wall response over a window of
    length T - t:

        K(delta) = int_0^delta E[e^{-rho r - R_r^{0,0}}] * ... dr

    collapsed to the closed form (b = (rho+alpha)/sqrt(2 alpha))

        K(delta) = [2 Phi(b sqrt(delta)) - 1
                    + 2 b sqrt(delta) phi(b sqrt(delta))] / (rho + alpha)
                   - ((rho + alpha)/alpha) delta Phi(-b sqrt(delta)).

    It gives the exact wall curvature h_uu(t, z, 0) as
    e^{-rho t} f(t, z) K(T - t), and for z-independent running cost the exact
    identity (h_u + h_uu)(t,z,u) = E[e^{-rho tau_u} f(tau_u) K(T - tau_u);
    tau_u <= T].  K(0) = 0, K(inf) = 1/(rho + alpha).  Needs alpha > 0.
    """
    if alpha <= 0.0:
        raise ValueError("wall kernel undefined at alpha = 0")
    t = np.asarray(t, dtype=float)
    delta = np.maximum(horizon - t, 0.0)
    ra = rho + alpha
    b = ra / math.sqrt(2.0 * alpha)
    x = b * np.sqrt(delta)
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    out = (2.0 * ndtr(x) - 1.0 + 2.0 * x * pdf) / ra \
        - (ra / alpha) * delta * ndtr(-x)
    return out if out.ndim else float(out)


def _interleave_pairs(plus_minus):
    """[v_plus; v_minus] halves -> adjacent-pair order (v+_0, v-_0, v+_1, ...)."""
    half = plus_minus.shape[0] // 2
    return np.column_stack([plus_minus[:half], plus_minus[half:]]).ravel()


def _stop_index(runmax, level, n_nodes):
    """First node where the drop's running max reaches `level` (last node if
    never).  runmax is non-decreasing along each row, so argmax of the boolean
    picks the first hit."""
    hit = runmax >= level
    return np.where(hit.any(axis=1), hit.argmax(axis=1), n_nodes - 1)


def _pathwise(scn: Scenario, t, z, u, config: McConfig, want):
    """Single streaming pass producing per-path scalars for the requested
    quantities.  Returns {name: array of n_paths values}; with antithetics the
    mirrored partner of path 2i sits at 2i+1.

    Quantity names: neg_h (the integral whose negative is h), h_u, h_uu,
    hu_plus_huu, neg_h_z, h_zu, h_t, xi.
    """
    horizon = scn.horizon
    if not 0.0 <= t <= horizon:
        raise ValueError(f"t={t} outside [0, {horizon}]")
    if u < 0:
        raise ValueError("u must be >= 0")
    want = frozenset(want)
    span = horizon - t
    if span == 0.0:
        out = {}
        for name in want:
            if name == "h_t":
                val = math.exp(-scn.market.rho * horizon) \
                    * float(scn.bench.f(horizon, z)) * math.exp(-u)
                out[name] = np.full(config.n_paths, val)
            else:
                out[name] = np.zeros(config.n_paths)
        return out

    der = scn.derived
    bench = scn.bench
    factor = scn.factor
    rho = scn.market.rho
    grid = TimeGrid.with_target_dt(t, horizon, config.step_for(span))
    times = grid.times()
    dt = grid.dt
    n_nodes = grid.n_steps + 1
    sqdt = math.sqrt(dt)

    need_tangent = bool(want & {"neg_h_z", "h_zu"})
    need_factor = bench.depends_on_z or need_tangent
    need_fd = bool(want & {"h_uu", "hu_plus_huu"})
    # stopped integrals at barrier levels u and (for the curvature) u +- step,
    # falling back to an upward one-sided stencil when u sits under one step
    step = config.fd_step
    if need_fd:
        centered = u >= step
        fd_levels = (u - step, u + step) if centered else (u + step, u + 2.0 * step)
    need_drop_int = bool(want & {"h_u", "h_uu", "hu_plus_huu", "xi"})

    disc = np.exp(-rho * times)
    corr = der.varrho
    orth = math.sqrt(max(0.0, 1.0 - corr * corr))
    drift_slope = factor.drift_slope
    vol_slope = factor.vol_slope

    gen = np.random.default_rng((int(config.seed), 0))
    chunk = max(2, min(config.n_paths, _CHUNK_BUDGET // n_nodes))
    if chunk % 2:
        chunk += 1

    out = {name: [] for name in want}
    done = 0
    while done < config.n_paths:
        n = min(chunk, config.n_paths - done)
        if config.antithetic:
            half = n // 2
            raw1 = gen.standard_normal((half, grid.n_steps)) * sqdt
            raw2 = gen.standard_normal((half, grid.n_steps)) * sqdt
            db1 = np.vstack([raw1, -raw1])
            db2 = np.vstack([raw2, raw2])
        else:
            db1 = gen.standard_normal((n, grid.n_steps)) * sqdt
            db2 = gen.standard_normal((n, grid.n_steps)) * sqdt

        if need_factor:
            m = np.empty((n, n_nodes))
            m[:, 0] = z
            if need_tangent:
                tang = np.empty((n, n_nodes))
                tang[:, 0] = 1.0
            for k in range(grid.n_steps):
                mk = m[:, k]
                dwk = corr * db1[:, k] + orth * db2[:, k]
                if need_tangent:
                    tang[:, k + 1] = tang[:, k] * (1.0 + drift_slope * dt
                                                   + vol_slope * dwk)
                m[:, k + 1] = mk + factor.mu_z(mk) * dt + factor.sigma_z(mk) * dwk
            f_nodes = bench.f(times, m)
            if need_tangent:
                fp_nodes = bench.df_dz(times, m)
        else:
            f_nodes = np.full((n, n_nodes), float(bench.f(t, z)))

        d = np.zeros((n, n_nodes))
        np.cumsum(-der.sqrt_two_alpha * db1 - der.mu_tilde * dt,
                  axis=1, out=d[:, 1:])
        runmax = np.maximum.accumulate(np.maximum(d, 0.0), axis=1)
        # continuity correction: the grid only samples the drop between nodes,
        # so its observed running max sits about `lift` below the continuous
        # one; lift the observed max (and lower every stopping level) by it
        lift = _BGK_BETA1 * der.sqrt_two_alpha * sqdt
        rows = np.arange(n)
        if want & {"h_u", "h_uu", "hu_plus_huu", "h_zu"}:
            idx = _stop_index(runmax, u - lift, n_nodes)

        chunk_vals = {}
        if want & {"neg_h", "h_t"}:
            g = disc * f_nodes * np.exp(-(np.maximum(u, runmax + lift) - d))
            ct = np.empty((n, n_nodes))
            ct[:, 0] = 0.0
            np.cumsum(0.5 * dt * (g[:, :-1] + g[:, 1:]), axis=1, out=ct[:, 1:])
            if "neg_h" in want:
                chunk_vals["neg_h"] = ct[:, -1].copy()
            if "h_t" in want:
                chunk_vals["h_t"] = g[:, -1] + rho * ct[:, -1]
            del g, ct
        if need_drop_int:
            # cumulative integral of the drop-tilted cost: the stopped-at-level
            # integral is e^{-level} times this at the first hitting node
            gd = disc * f_nodes * np.exp(d)
            ctd = np.empty((n, n_nodes))
            ctd[:, 0] = 0.0
            np.cumsum(0.5 * dt * (gd[:, :-1] + gd[:, 1:]), axis=1, out=ctd[:, 1:])
            del gd
            if "xi" in want:
                chunk_vals["xi"] = math.exp(rho * t) * ctd[:, -1]
            if want & {"h_u", "h_uu", "hu_plus_huu"}:
                s_mid = math.exp(-u) * ctd[rows, idx]
                if "h_u" in want:
                    chunk_vals["h_u"] = s_mid
                if need_fd:
                    s_lo = math.exp(-fd_levels[0]) \
                        * ctd[rows, _stop_index(runmax, fd_levels[0] - lift, n_nodes)]
                    s_hi = math.exp(-fd_levels[1]) \
                        * ctd[rows, _stop_index(runmax, fd_levels[1] - lift, n_nodes)]
                    if centered:
                        curv = (s_hi - s_lo) / (2.0 * step)
                    else:
                        curv = (-3.0 * s_mid + 4.0 * s_lo - s_hi) / (2.0 * step)
                    if "h_uu" in want:
                        chunk_vals["h_uu"] = curv
                    if "hu_plus_huu" in want:
                        chunk_vals["hu_plus_huu"] = s_mid + curv
            del ctd
        if need_tangent:
            if "neg_h_z" in want:
                gz = disc * fp_nodes * tang \
                    * np.exp(-(np.maximum(u, runmax + lift) - d))
                ctz = np.empty((n, n_nodes))
                ctz[:, 0] = 0.0
                np.cumsum(0.5 * dt * (gz[:, :-1] + gz[:, 1:]), axis=1,
                          out=ctz[:, 1:])
                chunk_vals["neg_h_z"] = ctz[:, -1].copy()
                del gz, ctz
            if "h_zu" in want:
                gzd = disc * fp_nodes * tang * np.exp(d)
                ctzd = np.empty((n, n_nodes))
                ctzd[:, 0] = 0.0
                np.cumsum(0.5 * dt * (gzd[:, :-1] + gzd[:, 1:]), axis=1,
                          out=ctzd[:, 1:])
                chunk_vals["h_zu"] = math.exp(-u) * ctzd[rows, idx]
                del gzd, ctzd

        for name, vals in chunk_vals.items():
            out[name].append(_interleave_pairs(vals) if config.antithetic else vals)
        done += n

    return {name: np.concatenate(vals) for name, vals in out.items()}


def _settings(scn, config, t, z, u, label):
    s = dict(asdict(config), t=float(t), z=float(z), horizon=scn.horizon,
             estimator=label)
    if u is not None:
        s["u"] = float(u)
    return s


def _reduce(per_path, config: McConfig, settings) -> Estimate:
    v = np.asarray(per_path, dtype=float)
    if config.antithetic:
        v = v.reshape(-1, 2).mean(axis=1)
    n = v.shape[0]
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(v.mean()), se, int(per_path.shape[0]), settings)


def h_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h(t,z,u) = -E[int_t^T e^{-rho s} f(s,M_s) e^{-R_s} ds]  (always <= 0)."""
    per = _pathwise(scn, t, z, u, config, {"neg_h"})["neg_h"]
    return _reduce(-per, config, _settings(scn, config, t, z, u, "h"))


def h_u_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_u: the h integrand stopped at the barrier hitting time tau_u ^ T,
    with positive sign.  Exactly zero at u = 0 (empty stopped integral)."""
    per = _pathwise(scn, t, z, u, config, {"h_u"})["h_u"]
    return _reduce(per, config, _settings(scn, config, t, z, u, "h_u"))


def h_uu_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_uu as a common-random-number difference quotient of the stopped
    integral across barrier levels u +- fd_step (one-sided upward stencil when
    u < fd_step).  All levels reuse one simulated cumulative integral per
    path, so the quotient noise stays far below the level values themselves.
    Bias is O(fd_step^2) plus the residual discrete-hitting bias left after
    the running-max continuity correction.  At u = 0 the exact wall curvature
    e^{-rho t} f(t,z) * wall_kernel(t, T) is a closed-form cross-check."""
    per = _pathwise(scn, t, z, u, config, {"h_uu"})["h_uu"]
    return _reduce(per, config, _settings(scn, config, t, z, u, "h_uu"))


def hu_plus_huu_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_u + h_uu combined per path (stopped integral plus its level
    difference quotient); this is e^{-2u} times the dual convexity in y and
    must be positive up to MC error."""
    per = _pathwise(scn, t, z, u, config, {"hu_plus_huu"})["hu_plus_huu"]
    return _reduce(per, config, _settings(scn, config, t, z, u, "hu_plus_huu"))


def h_z_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_z via the tangent (pathwise-derivative) process."""
    per = _pathwise(scn, t, z, u, config, {"neg_h_z"})["neg_h_z"]
    return _reduce(-per, config, _settings(scn, config, t, z, u, "h_z"))


def h_zu_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_zu: stopped tangent integral; exactly zero at u = 0."""
    per = _pathwise(scn, t, z, u, config, {"h_zu"})["h_zu"]
    return _reduce(per, config, _settings(scn, config, t, z, u, "h_zu"))


def h_t_mc(scn: Scenario, t, z, u, config: McConfig = McConfig()) -> Estimate:
    """h_t = E[e^{-rho T} f(T,M_T) e^{-R_T}] + rho * E[int ...]."""
    per = _pathwise(scn, t, z, u, config, {"h_t"})["h_t"]
    return _reduce(per, config, _settings(scn, config, t, z, u, "h_t"))


def xi_mc(scn: Scenario, t, z, config: McConfig = McConfig()) -> Estimate:
    """Superhedge threshold xi(t,z): the u -> infinity limit of e^{rho t+u}h_u,
    where the reflection factor degenerates to the exponential of the drop
    process itself."""
    per = _pathwise(scn, t, z, 0.0, config, {"xi"})["xi"]
    return _reduce(per, config, _settings(scn, config, t, z, None, "xi"))
