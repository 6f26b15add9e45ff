"""Scenario files: JSON round-trip of problem instances and the parser used
by the CLI.  The format is documented in docs/scenario.schema.json; parsing
here is hand-rolled so every problem is reported with a path-qualified
witness instead of a generic schema error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .models import (BenchmarkSpec, FactorSpec, GbmIndexSpec, MarketParams,
                     Scenario, ValidationError)


class ScenarioFileError(ValidationError):
    """Raised with the full list of problems found in a scenario file."""

    def __init__(self, problems, source=""):
        self.problems = tuple(problems)
        head = f"invalid scenario file {source}" if source else "invalid scenario"
        super().__init__(head + "\n" + "\n".join(f"  - {p}" for p in self.problems))


SOLVER_KEYS = ("n_u", "n_z", "u_max", "z_span", "dt", "max_saved", "check_every")
MC_KEYS = ("n_paths", "dt_cap", "antithetic", "fd_step", "seed")
TOP_KEYS = ("name", "description", "market", "factor", "benchmark", "index",
            "gamma", "solver", "mc")

_FACTOR_PARAMS = {
    "constant": ("drift", "vol"),
    "ou": ("speed", "mean", "vol"),
    "geometric": ("growth", "vol"),
}
_BENCH_PARAMS = {
    "constant": ("level",),
    "linear": ("slope",),
    "logistic": ("base", "scale", "steep"),
}


# -- Scenario <-> plain dict ---------------------------------------------------


def scenario_payload(scn: Scenario) -> dict:
    """JSON-serializable dict that scenario_from_payload inverts exactly.

    The factor is stored through its raw affine coefficients, not the family
    constructor arguments, so the round trip reproduces the same floats."""
    m = scn.market
    f = scn.factor
    b = scn.bench
    payload = {
        "market": {
            "mu": np.asarray(m.mu).tolist(),
            "sigma": np.asarray(m.sigma).tolist(),
            "rho": float(m.rho),
            "horizon": None if m.horizon is None else float(m.horizon),
        },
        "factor": {
            "family": f.family,
            "gamma": np.asarray(f.gamma).tolist(),
            "z0": float(f.z0),
            "coeffs": {
                "drift_const": f.drift_const,
                "drift_slope": f.drift_slope,
                "vol_const": f.vol_const,
                "vol_slope": f.vol_slope,
            },
        },
        "benchmark": {"family": b.family, "a": float(b.a)},
    }
    for key in _BENCH_PARAMS[b.family]:
        payload["benchmark"][key] = float(getattr(b, key))
    if scn.index is not None:
        payload["index"] = {
            "mu_index": float(scn.index.mu_index),
            "sigma_index": float(scn.index.sigma_index),
            "z0": float(scn.index.z0),
        }
    return payload


def scenario_from_payload(payload: dict) -> Scenario:
    sf = _parse(payload, source="<payload>", want_settings=False)
    return sf.scenario


# -- scenario files -------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioFile:
    """Parsed scenario file: the problem instance plus per-file numeric
    settings the CLI feeds to the solvers (both may be overridden by flags)."""

    scenario: Scenario
    name: str = ""
    description: str = ""
    solver: dict = dc_field(default_factory=dict)
    mc: dict = dc_field(default_factory=dict)
    source: str = ""


def parse_scenario_text(text, source="<string>") -> ScenarioFile:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioFileError([f"not valid JSON: {e}"], source)
    return _parse(payload, source, want_settings=True)


def load_scenario_file(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioFileError([f"cannot read: {e}"], str(path))
    return parse_scenario_text(text, source=str(path))


# -- hand-rolled validation -----------------------------------------------------


class _Problems(list):
    def at(self, path, msg):
        self.append(f"{path}: {msg}")


def _get_obj(payload, key, problems, required=True):
    got = payload.get(key)
    if got is None:
        if required:
            problems.at(key, "required object is missing")
        return None
    if not isinstance(got, dict):
        problems.at(key, f"must be an object, got {type(got).__name__}")
        return None
    return got


def _num(obj, key, path, problems, required=True, default=None, allow_none=False):
    if key not in obj:
        if required:
            problems.at(f"{path}.{key}", "required number is missing")
        return default
    got = obj[key]
    if got is None and allow_none:
        return None
    if isinstance(got, bool) or not isinstance(got, (int, float)):
        problems.at(f"{path}.{key}", f"must be a number, got {got!r}")
        return default
    return float(got)


def _vector(obj, key, path, problems):
    got = obj.get(key)
    if got is None:
        problems.at(f"{path}.{key}", "required numeric array is missing")
        return None
    try:
        arr = np.asarray(got, dtype=float)
    except (TypeError, ValueError):
        problems.at(f"{path}.{key}", f"must be a numeric array, got {got!r}")
        return None
    if arr.ndim != 1 or arr.size == 0:
        problems.at(f"{path}.{key}", f"must be a non-empty 1-d array, got shape {arr.shape}")
        return None
    return arr


def _parse(payload, source, want_settings) -> ScenarioFile:
    problems = _Problems()
    if not isinstance(payload, dict):
        raise ScenarioFileError(["top level must be a JSON object"], source)
    for key in payload:
        if key not in TOP_KEYS:
            problems.at(key, f"unknown key (known: {', '.join(TOP_KEYS)})")

    market = None
    mobj = _get_obj(payload, "market", problems)
    if mobj is not None:
        mu = _vector(mobj, "mu", "market", problems)
        sigma = None
        raw_sigma = mobj.get("sigma")
        if raw_sigma is None:
            problems.at("market.sigma", "required matrix is missing")
        else:
            try:
                sigma = np.asarray(raw_sigma, dtype=float)
            except (TypeError, ValueError):
                problems.at("market.sigma", f"must be a numeric matrix, got {raw_sigma!r}")
            if sigma is not None and sigma.ndim != 2:
                problems.at("market.sigma", f"must be 2-d, got shape {sigma.shape}")
                sigma = None
        rho = _num(mobj, "rho", "market", problems)
        horizon = _num(mobj, "horizon", "market", problems, required=False,
                       allow_none=True)
        if mu is not None and sigma is not None and rho is not None:
            try:
                market = MarketParams(mu=mu, sigma=sigma, rho=rho, horizon=horizon)
            except ValidationError as e:
                problems.at("market", str(e))

    index_obj = payload.get("index")
    bench_obj = payload.get("benchmark")
    factor_obj = payload.get("factor")
    if index_obj is not None and bench_obj is not None and factor_obj is None:
        problems.at("index", "an index block with an explicit benchmark is "
                             "ambiguous; give the factor too (serializer form) "
                             "or drop the benchmark")

    factor = None
    gamma = None
    if factor_obj is not None:
        factor = _parse_factor(factor_obj, problems)
        if factor is not None:
            gamma = factor.gamma
    if gamma is None and "gamma" in payload:
        gamma = _vector(payload, "gamma", "", problems)

    scenario = None
    if index_obj is not None and bench_obj is not None:
        # serializer round-trip form: factor and benchmark are the derived
        # blocks, rebuild them verbatim and attach the index tag
        idx = _parse_index(index_obj, problems)
        bench = _parse_benchmark(bench_obj, problems)
        if market is not None and idx is not None and bench is not None \
                and factor is not None and not problems:
            try:
                scenario = Scenario(market=market, factor=factor, bench=bench,
                                    index=idx)
            except ValidationError as e:
                problems.at("", str(e))
    elif index_obj is not None:
        idx = _parse_index(index_obj, problems)
        if gamma is None:
            problems.at("gamma", "index scenarios need gamma (either top-level "
                                 "or inside a factor block)")
        if market is not None and idx is not None and gamma is not None and not problems:
            try:
                scenario = Scenario.from_index(market, idx, gamma)
            except ValidationError as e:
                problems.at("index", str(e))
    else:
        bench = None
        if bench_obj is None:
            problems.at("benchmark", "required unless an index block is given")
        else:
            bench = _parse_benchmark(bench_obj, problems)
        if factor_obj is None:
            problems.at("factor", "required unless an index block is given")
        if market is not None and factor is not None and bench is not None and not problems:
            try:
                scenario = Scenario(market=market, factor=factor, bench=bench)
            except ValidationError as e:
                problems.at("", str(e))

    solver = {}
    mc = {}
    if want_settings:
        solver = _parse_settings(payload, "solver", SOLVER_KEYS, problems)
        mc = _parse_settings(payload, "mc", MC_KEYS, problems)
        for key in ("name", "description"):
            if key in payload and not isinstance(payload[key], str):
                problems.at(key, "must be a string")

    if problems or scenario is None:
        raise ScenarioFileError(problems or ["scenario could not be built"], source)
    return ScenarioFile(
        scenario=scenario,
        name=str(payload.get("name", "")),
        description=str(payload.get("description", "")),
        solver=solver, mc=mc, source=source)


def _parse_factor(obj, problems):
    if not isinstance(obj, dict):
        problems.at("factor", "must be an object")
        return None
    family = obj.get("family")
    if family not in _FACTOR_PARAMS:
        problems.at("factor.family", f"must be one of {sorted(_FACTOR_PARAMS)}, got {family!r}")
        return None
    gamma = _vector(obj, "gamma", "factor", problems)
    z0 = _num(obj, "z0", "factor", problems)
    if gamma is None or z0 is None:
        return None
    try:
        coeffs = obj.get("coeffs")
        if coeffs is not None:
            if not isinstance(coeffs, dict):
                problems.at("factor.coeffs", "must be an object of affine coefficients")
                return None
            kw = {k: _num(coeffs, k, "factor.coeffs", problems, required=False,
                          default=0.0) for k in
                  ("drift_const", "drift_slope", "vol_const", "vol_slope")}
            return FactorSpec(family, gamma, z0, **kw)
        names = _FACTOR_PARAMS[family]
        kw = {}
        for name in names:
            val = _num(obj, name, "factor", problems,
                       required=(family != "constant"), default=0.0)
            if val is None:
                return None
            kw[name] = val
        ctor = getattr(FactorSpec, family)
        return ctor(gamma=gamma, z0=z0, **kw)
    except ValidationError as e:
        problems.at("factor", str(e))
        return None


def _parse_benchmark(obj, problems):
    if not isinstance(obj, dict):
        problems.at("benchmark", "must be an object")
        return None
    family = obj.get("family")
    if family not in _BENCH_PARAMS:
        problems.at("benchmark.family",
                    f"must be one of {sorted(_BENCH_PARAMS)}, got {family!r}")
        return None
    kw = {"a": _num(obj, "a", "benchmark", problems, required=False, default=0.0)}
    for name in _BENCH_PARAMS[family]:
        val = _num(obj, name, "benchmark", problems,
                   required=(name != "steep"), default=1.0)
        if val is None:
            return None
        kw[name] = val
    try:
        return getattr(BenchmarkSpec, family)(**kw)
    except ValidationError as e:
        problems.at("benchmark", str(e))
        return None


def _parse_index(obj, problems):
    if not isinstance(obj, dict):
        problems.at("index", "must be an object")
        return None
    mu_index = _num(obj, "mu_index", "index", problems)
    sigma_index = _num(obj, "sigma_index", "index", problems)
    z0 = _num(obj, "z0", "index", problems)
    if None in (mu_index, sigma_index, z0):
        return None
    try:
        return GbmIndexSpec(mu_index=mu_index, sigma_index=sigma_index, z0=z0)
    except ValidationError as e:
        problems.at("index", str(e))
        return None


def _parse_settings(payload, key, known, problems):
    obj = payload.get(key)
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        problems.at(key, "must be an object")
        return {}
    out = {}
    for k, v in obj.items():
        if k not in known:
            problems.at(f"{key}.{k}", f"unknown setting (known: {', '.join(known)})")
            continue
        if k == "antithetic":
            if not isinstance(v, bool):
                problems.at(f"{key}.{k}", "must be true or false")
                continue
            out[k] = v
        elif k == "z_span":
            if (not isinstance(v, (list, tuple)) or len(v) != 2
                    or not all(isinstance(x, (int, float)) for x in v)):
                problems.at(f"{key}.{k}", "must be a [lo, hi] pair")
                continue
            out[k] = (float(v[0]), float(v[1]))
        elif v is None:
            out[k] = None
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.at(f"{key}.{k}", f"must be a number, got {v!r}")
        elif k in ("n_u", "n_z", "max_saved", "check_every", "n_paths", "seed"):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out
