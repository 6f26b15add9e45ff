"""Command-line front door.

Every subcommand loads a scenario file, resolves settings (file values
overridden by flags), writes its artifacts into the output directory, and
emits a run report capturing the full configuration, so any output can be
reproduced from the report alone.  Exit codes: 0 success, 1 validation
failure, 2 numerical instability.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import report as rpt
from .dual_mc import McConfig, h_mc, h_u_mc, h_uu_mc, h_z_mc, xi_mc
from .dual_pde import DualField, InstabilityError, SolverConfig, solve_dual
from .gbm import (FIGURE_SWEEPS, GbmSolution, figure_sweep, figure_trends,
                  xi_rate_form)
from .models import ValidationError, validate_assumptions
from .primal import PrimalSolution
from .scenarios import ScenarioFileError, load_scenario_file, scenario_payload
from .tracker import StrategySpec, evaluate_strategy, superhedge_check

OUT_ENV = "BENCHTRACK_OUT"


def _parser():
    top = argparse.ArgumentParser(
        prog="benchtrack",
        description="Injection-cost numerics for ratcheting benchmark tracking")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--paths", type=int, default=None,
                        help="Monte-Carlo path count override")
    common.add_argument("--grid-u", type=int, default=None, dest="grid_u")
    common.add_argument("--grid-z", type=int, default=None, dest="grid_z")
    common.add_argument("--dt", type=float, default=None,
                        help="time step override (PDE march, MC, simulation)")
    common.add_argument("--out", default=None,
                        help=f"output directory (default ${OUT_ENV} or ./benchtrack-out)")
    common.add_argument("--no-plots", action="store_true", dest="no_plots")

    sub = top.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", parents=[common],
                       help="check standing assumptions, report witnesses")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dual-mc", parents=[common],
                       help="Monte-Carlo point estimates of the dual field")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--z", type=float, default=None, help="default: factor z0")
    p.add_argument("--u", default="0.5,1.0", help="comma-separated depths")
    p.set_defaults(func=cmd_dual_mc)

    p = sub.add_parser("dual-pde", parents=[common],
                       help="solve the dual field and save it")
    p.set_defaults(func=cmd_dual_pde)

    p = sub.add_parser("primal", parents=[common],
                       help="tabulate value, marginal value, boundary, portfolio")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--z", type=float, default=None)
    p.add_argument("--n-x", type=int, default=41, dest="n_x")
    p.add_argument("--field", default=None,
                   help="reuse a saved field instead of solving")
    p.set_defaults(func=cmd_primal)

    p = sub.add_parser("simulate", parents=[common],
                       help="evaluate a strategy by simulation")
    p.add_argument("--strategy", default="feedback",
                   choices=["feedback", "closed-form", "constant", "zero",
                            "superhedge"])
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--theta", default=None,
                   help="comma-separated weights for --strategy constant")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("closed-form", parents=[common],
                       help="geometric-index closed forms")
    p.add_argument("--n-x", type=int, default=41, dest="n_x")
    p.set_defaults(func=cmd_closed_form)

    p = sub.add_parser("figures", parents=[common],
                       help="reproduce the comparative-statics sweeps")
    p.add_argument("ids", nargs="*", type=int, default=[],
                   help="figure numbers (default: all)")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("crosscheck", parents=[common],
                       help="run the MC vs PDE vs closed-form suite")
    p.set_defaults(func=cmd_crosscheck)
    return top


# -- plumbing --------------------------------------------------------------------


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV) or "benchtrack-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args, required=True):
    if args.scenario is None:
        if required:
            raise ValidationError("this subcommand needs --scenario")
        return None
    return load_scenario_file(args.scenario)


def _solver_config(args, sf):
    kw = dict(sf.solver) if sf else {}
    if args.grid_u is not None:
        kw["n_u"] = args.grid_u
    if args.grid_z is not None:
        kw["n_z"] = args.grid_z
    if args.dt is not None:
        kw["dt"] = args.dt
    return SolverConfig(**kw)


def _mc_config(args, sf, default_paths=20_000):
    kw = dict(sf.mc) if sf else {}
    kw.setdefault("n_paths", default_paths)
    if args.paths is not None:
        kw["n_paths"] = args.paths
    if args.dt is not None:
        kw["dt_cap"] = args.dt
    if args.seed is not None:
        kw["seed"] = args.seed
    return McConfig(**kw)


def _run_config(args, sf, **extra):
    cfg = {
        "subcommand": args.subcommand,
        "scenario_file": args.scenario,
        "seed": args.seed,
        "paths": args.paths,
        "grid_u": args.grid_u,
        "grid_z": args.grid_z,
        "dt": args.dt,
        "out": str(_out_dir(args)),
    }
    if sf is not None:
        cfg["scenario"] = scenario_payload(sf.scenario)
        cfg["scenario_name"] = sf.name
        cfg["solver_settings"] = dict(sf.solver)
        cfg["mc_settings"] = dict(sf.mc)
    cfg.update(extra)
    return cfg


def _emit_error(args, kind, exc, problems=None):
    payload = {"error": {"type": kind, "message": str(exc)}}
    if problems:
        payload["error"]["problems"] = list(problems)
    print(json.dumps(payload, sort_keys=True))
    try:
        rpt.write_json(_out_dir(args) / "error.json", payload)
    except OSError:
        pass


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioFileError as e:
        _emit_error(args, "scenario-file", e, problems=e.problems)
        return 1
    except InstabilityError as e:
        _emit_error(args, "numerical-instability", e)
        return 2
    except ValidationError as e:
        _emit_error(args, "validation", e)
        return 1
    except FloatingPointError as e:
        _emit_error(args, "numerical-instability", e)
        return 2


# -- subcommands ------------------------------------------------------------------


def cmd_validate(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    report = validate_assumptions(scn.factor, scn.bench)
    der = scn.derived
    results = {
        "passed": report.passed,
        "checks": [{"name": c.name, "ok": c.ok, "witness": c.witness}
                   for c in report.checks],
        "derived": {
            "alpha": der.alpha, "kappa": der.kappa, "varrho": der.varrho,
            "sqrt_two_alpha": der.sqrt_two_alpha,
            "effective_horizon": scn.horizon,
        },
    }
    if scn.index is not None:
        results["derived"]["tracking_lambda"] = scn.index.tracking_lambda(der)
    rpt.write_json(out / "validate.json", _run_config(args, sf) | {"results": results})
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_dual_mc(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    mc = _mc_config(args, sf)
    t = args.t
    z = args.z if args.z is not None else scn.factor.z0
    depths = [float(s) for s in args.u.split(",") if s.strip()]
    estimators = (("h", h_mc), ("h_u", h_u_mc), ("h_uu", h_uu_mc),
                  ("h_z", h_z_mc))
    rows = []
    for u in depths:
        for name, fn in estimators:
            est = fn(scn, t, z, u, mc)
            rows.append([name, t, z, u, est.value, est.std_error, est.n_paths])
    xi = xi_mc(scn, t, z, mc)
    rows.append(["xi", t, z, None, xi.value, xi.std_error, xi.n_paths])
    names = ["estimate", "t", "z", "u", "value", "std_error", "n_paths"]
    rpt.write_csv(out / "dual-mc.csv", names, rows)
    rpt.write_json(out / "dual-mc.json", rpt.run_payload(
        _run_config(args, sf, mc=mc.__dict__), {"rows": rows, "columns": names}))
    for row in rows:
        print(f"{row[0]:5s} u={row[3]!s:6s} -> {row[4]: .6f} +- {row[5]:.6f}")
    return 0


def cmd_dual_pde(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    config = _solver_config(args, sf)
    field = solve_dual(scn, config)
    field.save(out / "field.npz")
    i0 = 0
    wall = field.h[i0, :, 0]
    results = {
        "field_file": str(out / "field.npz"),
        "t_nodes": len(field.t_nodes), "z_nodes": len(field.z_nodes),
        "u_nodes": len(field.u_nodes), "meta": field.meta,
        "h_range": [float(field.h.min()), float(field.h.max())],
        "wall_value_range_t0": [float(wall.min()), float(wall.max())],
    }
    rpt.write_json(out / "dual-pde.json", rpt.run_payload(
        _run_config(args, sf, solver=config.__dict__), results))
    if not args.no_plots:
        rpt.render_field_heatmap(
            out / "dual-pde.png", field.u_nodes, field.z_nodes, field.h[i0],
            title="dual field at the initial time", xlabel="depth u",
            ylabel="factor z")
    print(f"saved field {field.h.shape} to {out / 'field.npz'}")
    return 0


def cmd_primal(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    if args.field:
        field = DualField.load(args.field)
    else:
        field = solve_dual(scn, _solver_config(args, sf))
    primal = PrimalSolution(field)
    t = args.t
    z = args.z if args.z is not None else scn.factor.z0
    xi = primal.xi(t, z)
    xs = np.linspace(0.0, 1.25 * xi, args.n_x)
    names, rows = primal.tabulate(t, z, xs)
    rpt.write_csv(out / "primal.csv", names, rows)
    results = {"xi": xi, "t": t, "z": z,
               "wall_marginal_value": primal.wall_marginal_value(t, z),
               "columns": names}
    rpt.write_json(out / "primal.json",
                   rpt.run_payload(_run_config(args, sf), results))
    if not args.no_plots:
        arr = np.array([[c if c is not None else math.nan for c in r]
                        for r in rows], dtype=float)
        rpt.render_lines(
            out / "primal.png", arr[:, 0], [arr[:, 1]], ["value"],
            title=f"primal value and portfolio at t={t:.3g}, z={z:.3g}",
            xlabel="cushion x", ylabel="v",
            second_panel=[arr[:, 3]], second_labels=["theta_1"],
            second_ylabel="portfolio")
    print(f"xi({t:.3g}, {z:.3g}) = {xi:.6f}; table -> {out / 'primal.csv'}")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    seed = args.seed if args.seed is not None else int(sf.mc.get("seed", 0))
    n_paths = args.paths if args.paths is not None else min(
        int(sf.mc.get("n_paths", 20_000)), 50_000)
    dt = args.dt if args.dt is not None else 1e-3

    if args.strategy in ("feedback", "superhedge"):
        field = solve_dual(scn, _solver_config(args, sf))
        primal = PrimalSolution(field)
        if args.strategy == "superhedge":
            report, xi0 = superhedge_check(scn, primal, x0=args.x0,
                                           n_paths=n_paths, dt=dt, seed=seed)
            results = report.__dict__ | {"xi0": xi0}
            rpt.write_json(out / "simulate.json", rpt.run_payload(
                _run_config(args, sf, strategy="superhedge"), results))
            print(f"superhedge: mean cost {report.mean:.3e} "
                  f"(cap {0.01 * xi0:.3e}), injecting paths "
                  f"{report.frac_paths_injecting:.2%}")
            return 0
        x0 = args.x0 if args.x0 is not None else 0.5 * primal.xi(
            0.0, scn.factor.z0)
        strat = StrategySpec.feedback_primal(primal)
        reference = -primal.primal_value(0.0, scn.factor.z0, x0)
    elif args.strategy == "closed-form":
        if scn.index is None:
            raise ValidationError(
                "closed-form strategy needs an index scenario")
        sol = GbmSolution.solve(scn.market, scn.index, scn.factor.gamma)
        x0 = args.x0 if args.x0 is not None else 0.5 * scn.index.z0
        strat = StrategySpec.closed_form_gbm(sol)
        reference = -sol.value_inf(scn.index.z0, x0)
    else:
        x0 = args.x0 if args.x0 is not None else 0.1
        if args.strategy == "constant":
            if not args.theta:
                raise ValidationError("--strategy constant needs --theta")
            weights = [float(s) for s in args.theta.split(",")]
            strat = StrategySpec.constant(weights)
        else:
            strat = StrategySpec.zero(d=scn.market.d)
        reference = None

    report = evaluate_strategy(strat, scn, x0, dt=dt, n_paths=n_paths,
                               seed=seed)
    results = report.__dict__ | {"reference_cost": reference}
    rpt.write_json(out / "simulate.json", rpt.run_payload(
        _run_config(args, sf, strategy=args.strategy, x0=x0), results))
    names = list(report.__dict__)
    rpt.write_csv(out / "simulate.csv", names,
                  [[getattr(report, n) for n in names]])
    line = (f"{report.strategy}: cost {report.mean:.6f} +- "
            f"{report.std_error:.6f} (x0={x0:.4g})")
    if reference is not None:
        line += f" vs value {reference:.6f}"
    print(line)
    return 0


def cmd_closed_form(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    if scn.index is None:
        raise ValidationError("closed-form needs an index scenario")
    sol = GbmSolution.solve(scn.market, scn.index, scn.factor.gamma)
    z = scn.index.z0
    xs = np.linspace(0.0, 2.0 * z, args.n_x)
    names = ["x", "v", "v_x", "ystar"]
    names += [f"theta_bar_{i+1}" for i in range(scn.market.d)]
    names += [f"theta_{i+1}" for i in range(scn.market.d)]
    rows = []
    for x in xs:
        x_eval = max(float(x), 1e-4 * z) if scn.index.sigma_index > 0 else float(x)
        bar = sol.theta_bar_inf(z, x_eval)
        full = sol.theta_inf(z, x_eval)
        rows.append([x, sol.value_inf(z, float(x)), sol.v_x_inf(z, float(x)),
                     sol.ystar_inf(z, float(x))] + list(bar) + list(full))
    rpt.write_csv(out / "closed-form.csv", names, rows)
    results = {
        "lambda": sol.lam, "gamma2": sol.gamma2, "gamma1": sol.gamma1,
        "gamma0": sol.gamma0, "trivial": sol.trivial,
        "stationary_residual_probe": sol.stationary_hjb_residual(z, 0.5 * z)
        if not sol.trivial else 0.0,
        "columns": names,
    }
    rpt.write_json(out / "closed-form.json",
                   rpt.run_payload(_run_config(args, sf), results))
    if not args.no_plots:
        arr = np.array(rows, dtype=float)
        rpt.render_lines(out / "closed-form.png", arr[:, 0], [arr[:, 1]],
                         ["value"], title=f"closed forms at z={z:.3g}",
                         xlabel="cushion x", ylabel="v",
                         second_panel=[arr[:, 4 + scn.market.d]],
                         second_labels=["theta_1"], second_ylabel="portfolio")
    print(f"gamma2={sol.gamma2:.6f} lambda={sol.lam:.6f} "
          f"table -> {out / 'closed-form.csv'}")
    return 0


def cmd_figures(args) -> int:
    out = _out_dir(args)
    ids = args.ids or sorted(FIGURE_SWEEPS)
    all_trends = {}
    for fig_id in ids:
        if fig_id not in FIGURE_SWEEPS:
            raise ValidationError(
                f"unknown figure {fig_id}; known: {sorted(FIGURE_SWEEPS)}")
        names, rows, flagged = figure_sweep(fig_id)
        rpt.write_csv(out / f"figure{fig_id}.csv", names, rows)
        trends = figure_trends(fig_id)
        all_trends[f"figure{fig_id}"] = [
            {"assertion": name, "ok": ok} for name, ok in trends]
        if flagged:
            all_trends[f"figure{fig_id}"].append(
                {"flagged_parameter_values": [list(f) for f in flagged]})
        if not args.no_plots:
            param, values = FIGURE_SWEEPS[fig_id]
            arr = np.array(rows, dtype=float)
            xs = np.unique(arr[:, 0])
            vcols, tcols, labels = [], [], []
            for pv in values:
                mask = arr[:, 1] == pv
                vcols.append(arr[mask, 2])
                tcols.append(arr[mask, 3])
                labels.append(f"{param}={pv:g}")
            rpt.render_lines(
                out / f"figure{fig_id}.png", xs, vcols, labels,
                title=f"sweep of {param}", xlabel="cushion x", ylabel="value",
                second_panel=tcols, second_ylabel="portfolio")
        for name, ok in trends:
            print(f"figure {fig_id}: [{'PASS' if ok else 'FAIL'}] {name}")
    rpt.write_json(out / "figures.json", rpt.run_payload(
        _run_config(args, None, figures=ids), all_trends))
    ok = all(item.get("ok", True)
             for checks in all_trends.values() for item in checks)
    return 0 if ok else 1


def cmd_crosscheck(args) -> int:
    out = _out_dir(args)
    sf = _load(args)
    scn = sf.scenario
    checks = []

    def add(name, ok, witness):
        checks.append({"name": name, "ok": bool(ok), "witness": witness})
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {witness}")

    base = validate_assumptions(scn.factor, scn.bench)
    add("assumptions", base.passed,
        "; ".join(c.witness for c in base.failures()) or "all standing assumptions hold")

    field = solve_dual(scn, _solver_config(args, sf))
    primal = PrimalSolution(field)
    mc = _mc_config(args, sf, default_paths=30_000)
    if args.paths is None:
        mc = McConfig(**{**mc.__dict__, "n_paths": min(mc.n_paths, 30_000)})

    t_probe = 0.25 * scn.horizon
    z0 = scn.factor.z0
    if len(field.z_nodes) > 1:
        span = field.z_nodes[-1] - field.z_nodes[0]
        z_list = [z0, z0 + 0.15 * span, z0 - 0.15 * span]
    else:
        z_list = [z0]
    probes = [(t, z, u) for t in (0.0, t_probe) for z in z_list
              for u in (0.4, 1.2)]
    worst = (0.0, None)
    for (t, z, u) in probes:
        est = h_mc(scn, t, z, u, mc)
        fd = field.probe("h", t, z, u)
        tol = max(3.0 * est.std_error, 0.02 * abs(est.value) + 5e-4)
        gap = abs(fd - est.value)
        if gap / tol > worst[0]:
            worst = (gap / tol, (t, z, u, fd, est.value, tol))
    t, z, u, fd, mcv, tol = worst[1]
    add("dual-equivalence", worst[0] <= 1.0,
        f"worst |h_fd - h_mc| = {abs(fd - mcv):.2e} (tol {tol:.2e}) "
        f"at (t={t:.3g}, z={z:.3g}, u={u:.3g})")

    wall = [primal.wall_marginal_value(t, z) for t in (0.0, t_probe)
            for z in z_list]
    add("wall-marginal-value", all(0.99 <= w <= 1.01 for w in wall),
        f"range [{min(wall):.5f}, {max(wall):.5f}] within [0.99, 1.01]")

    xi0 = primal.xi(0.0, z0)
    xie = xi_mc(scn, 0.0, z0, mc)
    gap = abs(xi0 - xie.value)
    tol = 3.0 * xie.std_error + 0.02 * abs(xie.value)
    add("boundary-vs-mc", gap <= tol,
        f"xi field {xi0:.5f} vs mc {xie.value:.5f} (gap {gap:.2e}, tol {tol:.2e})")

    xs = np.linspace(0.0, 0.9 * xi0, 8)
    vx = [primal.v_x(0.0, z0, float(x)) for x in xs]
    mono = all(vx[i] >= vx[i + 1] - 1e-9 for i in range(len(vx) - 1))
    in_range = all(0.0 <= v <= 1.0 + 1e-12 for v in vx)
    vals = [primal.primal_value(0.0, z0, float(x)) for x in xs]
    lips = all(abs(vals[i + 1] - vals[i]) <= (xs[i + 1] - xs[i]) + 1e-9
               for i in range(len(vals) - 1))
    second = np.diff(vals, 2)
    add("value-shape", mono and in_range and lips and second.max() <= 1e-6,
        f"v_x in [{min(vx):.4f}, {max(vx):.4f}] decreasing, Lipschitz-1, "
        f"max second difference {second.max():.2e}")

    res = []
    for tt in (0.1 * scn.horizon, 0.4 * scn.horizon):
        xi_t = primal.xi(tt, z0)
        for frac in np.linspace(0.05, 0.85, 8):
            res.append(abs(primal.hjb_residual(tt, z0, float(frac * xi_t),
                                               relative=True)))
    add("hjb-residual", max(res) <= 5e-2,
        f"max scaled residual {max(res):.2e} at {len(res)} interior probes")

    x0 = 0.4 * xi0
    strat = StrategySpec.feedback_primal(primal)
    sim_paths = args.paths if args.paths is not None else 20_000
    sim = evaluate_strategy(strat, scn, x0, dt=args.dt or 1e-3,
                            n_paths=sim_paths,
                            seed=args.seed if args.seed is not None else 0)
    ref = -primal.primal_value(0.0, z0, x0)
    gap = abs(sim.mean - ref)
    tol = 3.0 * sim.std_error + 0.05 * ref
    add("feedback-cost-vs-value", gap <= tol,
        f"simulated {sim.mean:.5f} +- {sim.std_error:.5f} vs value {ref:.5f}")

    if scn.index is not None and scn.market.rho > scn.index.mu_index:
        sol = GbmSolution.solve(scn.market, scn.index, scn.factor.gamma)
        if not sol.trivial:
            rr = max(abs(sol.stationary_hjb_residual(z0, float(x)))
                     for x in np.linspace(0.05, 2.0, 12) * z0)
            add("closed-form-residual", rr <= 1e-8,
                f"max stationary residual {rr:.2e}")

    passed = all(c["ok"] for c in checks)
    rpt.write_json(out / "crosscheck.json", rpt.run_payload(
        _run_config(args, sf), {"passed": passed, "checks": checks}))
    print(f"crosscheck: {'all pass' if passed else 'FAILURES'} "
          f"({sum(c['ok'] for c in checks)}/{len(checks)})")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
