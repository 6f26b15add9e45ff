"""Primal recovery from a solved dual field: value v, injection region,
feedback portfolio, and the original tracking cost.

Everything here is an evaluator over an immutable DualField, built on the
conjugacy v(t,z,x) = inf_{y in (0,1]} {vhat(t,z,y) + x*y}.  The minimizer
y*(t,z,x) solves vhat_y(t,z,y*) = -x; in grid coordinates u = -ln y that is
the root of the increasing map u -> e^{rho t + u} h_u(t,z,u) = x.  Points
with x at or beyond the grid-floor value of that map are treated as outside
the injection region (v = 0 there); the true region boundary xi(t,z) is the
u -> infinity limit, estimated separately by extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dual_pde import DualField, vhat_eval
from .models import ValidationError

YSTAR_BISECT_TOL = 1e-6      # bracket width in y before Newton polish
YSTAR_RESIDUAL_TOL = 1e-9    # |vhat_y + x| <= tol*(1+x)


class OutsideRegionError(ValueError):
    """The wealth level sits at or beyond the no-injection boundary."""


@dataclass(frozen=True)
class PrimalSolution:
    """Evaluators for the primal side of one solved scenario."""

    field: DualField
    _umax_cell: tuple = dc_field(init=False, repr=False, default=None)

    def __post_init__(self):
        # The far u-boundary leaves a layer of polluted nodes (one-sided
        # closures there feed back a few cells; the mixed hzu stencil is the
        # slowest to settle, clean only ~10 cells in).  Anchor every deep
        # evaluation a safe margin below u_max.  The extrapolation partner
        # sits about one unit of u lower: adjacent nodes would amplify tail
        # discretization noise by ~1/du, a unit baseline caps that at
        # 1/(1 - e^{-1}) while keeping the e^{-u} approach model.
        u = self.field.u_nodes
        du = float(u[1] - u[0])
        margin = max(0.5, 12.0 * du)
        k_hi = min(len(u) - 2, int(np.searchsorted(u, u[-1] - margin)))
        k_hi = max(k_hi, 2)
        k_lo = max(1, k_hi - max(1, round(1.0 / du)))
        object.__setattr__(self, "_umax_cell", (float(u[k_lo]), float(u[k_hi])))

    # -- plumbing ----------------------------------------------------------

    @property
    def scn(self):
        return self.field.scn

    def _neg_vhat_y(self, t, z, u):
        """-vhat_y = e^{rho t + u} h_u, the map whose root gives y*."""
        rho = self.scn.derived.rho
        return math.exp(rho * t + u) * self.field.probe("hu", t, z, u)

    def _interp_slope(self, name, t, z, u):
        """Slope in u of the interpolated field `name` on the cell holding u."""
        nodes = self.field.u_nodes
        du = nodes[1] - nodes[0]
        k = min(int((u - nodes[0]) / du), len(nodes) - 2)
        lo, hi = nodes[k], nodes[k + 1]
        return (self.field.probe(name, t, z, hi)
                - self.field.probe(name, t, z, lo)) / (hi - lo)

    # -- region boundary ----------------------------------------------------

    def xi(self, t, z) -> float:
        """No-injection boundary: the u -> infinity limit of -vhat_y,
        extrapolated from two deep grid levels under the e^{-u} approach
        model (O(du) accurate; reports should prefer the MC estimate when
        the two disagree beyond tolerance)."""
        u_lo, u_hi = self._umax_cell
        g_lo = self._neg_vhat_y(t, z, u_lo)
        g_hi = self._neg_vhat_y(t, z, u_hi)
        r = math.exp(-(u_hi - u_lo))
        return (g_hi - r * g_lo) / (1.0 - r)

    # -- minimizer ----------------------------------------------------------

    def ystar(self, t, z, x) -> float:
        """Root of y -> vhat_y(t,z,y) + x on (y_floor, 1]: bracketed bisection
        until the bracket is 1e-6 wide in y, then Newton polish using the
        interpolant's own in-cell slope (safeguarded against the flat tail,
        where extra bisection steps take over).  Raises OutsideRegionError
        when x reaches the grid-floor value of -vhat_y, the finite-grid stand-in
        for x >= xi(t,z)."""
        if x < 0:
            raise ValidationError("wealth x must be >= 0")
        if x == 0.0:
            return 1.0
        rho = self.scn.derived.rho
        lo, hi = 0.0, self._umax_cell[1]
        f_hi = self._neg_vhat_y(t, z, hi)
        if x >= f_hi:
            raise OutsideRegionError(
                f"x={x:.6g} >= {f_hi:.6g}, the largest -vhat_y on the grid")
        # bisection on u; bracket keeps F(lo) < x < F(hi)
        while math.exp(-lo) - math.exp(-hi) > YSTAR_BISECT_TOL:
            mid = 0.5 * (lo + hi)
            if self._neg_vhat_y(t, z, mid) < x:
                lo = mid
            else:
                hi = mid
        u = 0.5 * (lo + hi)
        tol = YSTAR_RESIDUAL_TOL * (1.0 + x)
        for it in range(60):
            f_u = self._neg_vhat_y(t, z, u)
            if it >= 2 and abs(f_u - x) <= tol:
                break
            if f_u < x:
                lo = u
            else:
                hi = u
            # derivative of the interpolated map e^{rho t+u} hu(u) in u
            slope = f_u + math.exp(rho * t + u) * self._interp_slope("hu", t, z, u)
            step_ok = slope > 0.0
            if step_ok:
                u_new = u - (f_u - x) / slope
                step_ok = lo < u_new < hi
            u = u_new if step_ok else 0.5 * (lo + hi)
        else:
            raise RuntimeError(
                f"y* root polish failed at (t={t}, z={z}, x={x}): "
                f"residual {abs(self._neg_vhat_y(t, z, u) - x):.3g} > {tol:.3g}")
        return math.exp(-u)

    # -- primal value and portfolio ------------------------------------------

    def primal_value(self, t, z, x) -> float:
        """v(t,z,x) = vhat(t,z,y*) + x y* inside the injection region,
        0 at or beyond the boundary; always <= 0."""
        try:
            y = self.ystar(t, z, x)
        except OutsideRegionError:
            return 0.0
        vv = vhat_eval(self.field, t, z, y)
        return min(0.0, vv.value + x * y)

    def v_x(self, t, z, x) -> float:
        """v_x = y* (0 outside the injection region)."""
        try:
            return self.ystar(t, z, x)
        except OutsideRegionError:
            return 0.0

    def wall_marginal_value(self, t, z) -> float:
        """Marginal value of cash at zero cushion, recovered from the raw
        field rather than the x = 0 shortcut: extrapolates the cushion map
        F(u) = e^{rho t+u} h_u from the first interior nodes back to F = 0
        and returns e^{-u_0} at the crossing.  The reflecting wall makes the
        exact answer 1; a wall-condition defect in the solved field shows up
        directly as a departure from 1."""
        u = self.field.u_nodes
        rho = self.scn.derived.rho
        f1 = math.exp(rho * t + u[1]) * self.field.probe("hu", t, z, float(u[1]))
        f2 = math.exp(rho * t + u[2]) * self.field.probe("hu", t, z, float(u[2]))
        if f2 <= f1:
            raise ValidationError(
                f"cushion map is not increasing off the wall at (t={t:.4g}, "
                f"z={z:.4g}): F({u[1]:.4g})={f1:.4g}, F({u[2]:.4g})={f2:.4g}")
        u0 = u[1] - f1 * (u[2] - u[1]) / (f2 - f1)
        return math.exp(-u0)

    def optimal_theta(self, t, z, x) -> np.ndarray:
        """Feedback portfolio.  Inside the injection region (and at x = 0):

            theta* = (ss')^{-1} mu * [y* vhat_yy] - (ss')^{-1} s gamma
                     * sigma_Z(z) * vhat_yz,

        both factors evaluated at y*(t,z,x); in dual-grid terms the brackets
        are e^{rho t+u}(h_u+h_uu) and -e^{rho t+u} h_zu.  Outside, both
        y -> 0 limits are extrapolated from the last two grid levels the same
        way xi is."""
        der = self.scn.derived
        rho = der.rho
        try:
            u = -math.log(self.ystar(t, z, x))
            w = math.exp(rho * t + u)
            convex = w * (self.field.probe("hu", t, z, u)
                          + self.field.probe("huu", t, z, u))
            cross = w * self.field.probe("hzu", t, z, u)
        except OutsideRegionError:
            u_lo, u_hi = self._umax_cell
            r = math.exp(-(u_hi - u_lo))

            def deep(name, u_at):
                return math.exp(rho * t + u_at) * self.field.probe(name, t, z, u_at)

            # e^{rho t+u}(h_u+h_uu) is the u-slope of e^{rho t+u} h_u, so its
            # deep value comes from differencing that curve, which avoids the
            # second-difference noise of the huu field outright; convexity of
            # the dual makes the true value nonnegative, hence the clamp
            convex = max(0.0, (deep("hu", u_hi) - deep("hu", u_lo)) / (u_hi - u_lo))
            cross = (deep("hzu", u_hi) - r * deep("hzu", u_lo)) / (1.0 - r)
        sig_z = float(self.scn.factor.sigma_z(z))
        return der.merton * convex + der.hedge * (sig_z * cross)

    # -- original problem ------------------------------------------------------

    def original_value(self, a, v0, z) -> float:
        """Minimal expected discounted injection cost for initial benchmark a
        and initial wealth v0: immediate top-up plus the cushion problem."""
        if a < 0 or v0 < 0:
            raise ValidationError("benchmark level and wealth must be >= 0")
        if a >= v0:
            return (a - v0) - self.primal_value(0.0, z, 0.0)
        return -self.primal_value(0.0, z, v0 - a)

    # -- consistency -----------------------------------------------------------

    def hjb_residual(self, t, z, x, relative=False) -> float:
        """Residual of the primal HJB equation at an interior point, computed
        through the dual chain rules (v_x = y*, v_xx = -1/vhat_yy, ...).
        With relative=True the residual is divided by the largest term
        magnitude, giving a scale-free defect.  Raises on degenerate
        curvature, which cannot occur strictly inside the injection region."""
        y = self.ystar(t, z, x)  # propagates OutsideRegionError
        vv = vhat_eval(self.field, t, z, y)
        if not vv.dyy > 0.0:
            raise ValidationError(
                f"degenerate dual curvature vhat_yy={vv.dyy:.3g} at "
                f"(t={t}, z={z}, x={x})")
        v = vv.value + x * y
        v_x = y
        v_xx = -1.0 / vv.dyy
        v_xz = -vv.dyz / vv.dyy
        v_zz = vv.dzz - vv.dyz ** 2 / vv.dyy
        der = self.scn.derived
        factor = self.scn.factor
        sig_z = float(factor.sigma_z(z))
        mu_z = float(factor.mu_z(z))
        f_val = float(self.scn.bench.f(t, z))
        terms = (vv.ddt,
                 -der.rho * v,
                 -der.alpha * v_x ** 2 / v_xx,
                 -der.phi_of(sig_z) * v_x * v_xz / v_xx,
                 0.5 * sig_z ** 2 * (v_zz - v_xz ** 2 / v_xx),
                 mu_z * vv.dz,
                 -f_val * v_x)
        residual = sum(terms)
        if relative:
            return residual / max(max(abs(tm) for tm in terms), 1e-12)
        return residual

    # -- reporting -------------------------------------------------------------

    def tabulate(self, t, z, xs):
        """Rows of (x, v, v_x, theta_1..theta_d) for a wealth sweep at fixed
        (t, z); returns (column names, array)."""
        d = self.scn.market.d
        names = ["x", "v", "v_x"] + [f"theta_{i+1}" for i in range(d)]
        rows = np.empty((len(xs), 3 + d))
        for i, x in enumerate(xs):
            rows[i, 0] = x
            rows[i, 1] = self.primal_value(t, z, x)
            rows[i, 2] = self.v_x(t, z, x)
            rows[i, 3:] = self.optimal_theta(t, z, x)
        return names, rows
