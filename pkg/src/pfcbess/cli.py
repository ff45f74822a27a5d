"""Command-line front end.

Four subcommands cover the workflow: ``fit`` turns a frequency trace
into an event model, ``solve`` computes the idle band for a configured
setup, ``simulate`` replays policies against events, and ``plan``
sweeps storage capacities. All inputs come from one JSON config file
plus command-line overrides; outputs are plain CSV and JSON files in
the chosen directory, written deterministically so reruns are
byte-identical. Every run also writes a manifest recording the config
digest, the effective seed, and the produced files.

Exit codes: 0 success, 2 malformed trace, 3 too few events, 4 an
iterative solve failed to converge, 5 a required input is missing.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .battery import BatteryParams
from .costs import CostModel, MarketParams, QuadratureError
from .distributions import (ExcursionSignModel, PfcEnergyDistribution,
                            ScalarDistribution, StochasticModel)
from .ingest import (EventSequence, InsufficientEventsError, TraceParseError,
                     correlation_report, extract_intervals, fit_empirical,
                     load_trace)
from .planning import (CapitalCostModel, expected_cost_vs_capacity,
                       optimal_capacity)
from .simulate import Policy, compare_policies, generate_events, simulate_policy
from .solver import (ConvergenceError, band_from_greedy, solve_thresholds_by_roots,
                     solve_thresholds_direct, value_iteration)

EXIT_OK = 0
EXIT_TRACE = 2
EXIT_EVENTS = 3
EXIT_CONVERGENCE = 4
EXIT_MISSING = 5


class MissingInputError(FileNotFoundError):
    """A required file, section, or parameter was not provided."""


# ----------------------------------------------------------------------
# config plumbing

def _load_config(path: str, overrides) -> dict:
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"config file not found: {path}")
    with open(p) as fh:
        cfg = json.load(fh)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return cfg


def _require(cfg: dict, section: str) -> dict:
    if section not in cfg:
        raise MissingInputError(f"config lacks required section {section!r}")
    return cfg[section]


def _stochastic_from_config(cfg: dict) -> StochasticModel:
    d = _require(cfg, "distributions")
    for key in ("i_hours", "j_hours", "p_pfc_kw"):
        if key not in d:
            raise MissingInputError(f"distributions section lacks {key!r}")
    if "p_over" not in d:
        raise MissingInputError("distributions section lacks 'p_over'")
    dist_i = ScalarDistribution.from_dict(d["i_hours"])
    dist_j = ScalarDistribution.from_dict(d["j_hours"])
    dist_p = ScalarDistribution.from_dict(d["p_pfc_kw"])
    p_over = float(d["p_over"])
    if "energy_kwh" in d:
        energy = PfcEnergyDistribution(ScalarDistribution.from_dict(d["energy_kwh"]))
        return StochasticModel(dist_i=dist_i, dist_j=dist_j, dist_p_pfc=dist_p,
                               signs=ExcursionSignModel(p_over), energy=energy)
    build = d.get("energy_build", {})
    return StochasticModel.build(dist_i, dist_j, dist_p, p_over,
                                 n_samples=int(build.get("n_samples", 100_000)),
                                 grid_size=int(build.get("grid_size", 512)),
                                 seed=int(build.get("seed", 0)))


def _model_from_config(cfg: dict) -> CostModel:
    bat = BatteryParams(**_require(cfg, "battery"))
    mkt = MarketParams(**_require(cfg, "market"))
    return CostModel(battery=bat, market=mkt, stochastic=_stochastic_from_config(cfg))


# ----------------------------------------------------------------------
# output plumbing

def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _write_manifest(out_dir: Path, args, outputs) -> None:
    digest = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    payload = {
        "command": args.command,
        "config_sha256": digest,
        "overrides": sorted(args.set or []),
        "seed": args.seed,
        "tool_version": __version__,
        "outputs": sorted(outputs),
    }
    _write_json(out_dir / "manifest.json", payload)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        pass


# ----------------------------------------------------------------------
# subcommands

def _cmd_fit(args) -> int:
    cfg = _load_config(args.config, args.set)
    trace = load_trace(args.trace)
    fit_cfg = cfg.get("fit", {})
    events = extract_intervals(trace,
                               deadband_hz=float(fit_cfg.get("deadband_hz", 0.01)),
                               debounce_samples=int(fit_cfg.get("debounce_samples", 5)))
    dists = cfg.get("distributions", {})
    if "p_pfc_kw" in dists:
        dist_p = ScalarDistribution.from_dict(dists["p_pfc_kw"])
    elif "market" in cfg and "reserve_kw" in cfg["market"]:
        dist_p = ScalarDistribution.point(float(cfg["market"]["reserve_kw"]), units="kW")
    else:
        raise MissingInputError("no reserve power law: set distributions.p_pfc_kw "
                                "or market.reserve_kw")
    if dist_p.kind == "point" and events.n_events:
        events = events.with_pfc_power(dist_p.lower)
    build = dists.get("energy_build", {})
    seed = args.seed if args.seed is not None else int(build.get("seed", 0))
    model = fit_empirical(events, p_pfc_kw=dist_p,
                          min_events=int(fit_cfg.get("min_events", 30)),
                          n_samples=int(build.get("n_samples", 100_000)),
                          grid_size=int(build.get("grid_size", 512)), seed=seed)
    report = correlation_report(events, max_lag=int(fit_cfg.get("max_lag", 5)))
    out = _out_dir(args)
    events.to_csv(out / "events.csv")
    _write_json(out / "model.json", model.to_dict())
    _write_json(out / "correlations.json", {
        "n_events": report["n_events"], "max_lag": report["max_lag"],
        "band": report["band"],
        "pairs": {k: v.tolist() for k, v in report["pairs"].items()},
        "accounting": {"dropped_lead_hours": events.dropped_lead_hours,
                       "tail_i_hours": events.tail_i_hours,
                       "dropped_tail_hours": events.dropped_tail_hours,
                       "total_hours": events.total_hours}})
    _write_manifest(out, args, ["events.csv", "model.json", "correlations.json"])
    print(f"fit: {events.n_events} events from {trace.n_samples} samples "
          f"({trace.duration_hours:.3f} h)")
    return EXIT_OK


def _cmd_solve(args) -> int:
    cfg = _load_config(args.config, args.set)
    model = _model_from_config(cfg)
    sol = cfg.get("solver", {})
    n_grid = int(sol.get("n_grid", 201))
    tol = sol.get("tol")
    method = sol.get("method", "both")
    if method not in ("roots", "direct", "both"):
        raise ValueError("solver.method must be 'roots', 'direct', or 'both'")
    payload: dict = {"n_grid": n_grid, "method": method}
    values = None
    if method in ("roots", "both"):
        vi = value_iteration(model, n_grid=n_grid, tol=tol,
                             max_iter=int(sol.get("max_iter", 10_000)))
        policy = solve_thresholds_by_roots(model, vi.values)
        greedy_band, greedy_dev = band_from_greedy(vi)
        values = vi.values
        payload.update(low=policy.low, high=policy.high,
                       iterations=vi.iterations, residual=vi.residual, tol=vi.tol,
                       greedy_low=greedy_band.low, greedy_high=greedy_band.high,
                       greedy_band_deviation_cells=greedy_dev)
    if method in ("direct", "both"):
        direct = solve_thresholds_direct(model, n_grid=n_grid,
                                         coarse_step=sol.get("coarse_step"))
        prefix = "direct_" if method == "both" else ""
        payload.update({prefix + "low": direct.policy.low,
                        prefix + "high": direct.policy.high,
                        prefix + "score": direct.score,
                        prefix + "degenerate": direct.degenerate,
                        prefix + "n_evaluated": direct.n_evaluated})
        if values is None:
            values = direct.values
    out = _out_dir(args)
    _write_json(out / "policy.json", payload)
    with open(out / "value_function.csv", "w") as fh:
        fh.write("soc,value\n")
        for s, v in zip(values.grid, values.values):
            fh.write(f"{s:.12g},{v:.12g}\n")
    _write_manifest(out, args, ["policy.json", "value_function.csv"])
    low = payload.get("low", payload.get("direct_low"))
    high = payload.get("high", payload.get("direct_high"))
    print(f"solve: idle band [{low:.4f}, {high:.4f}] on {n_grid} grid points")
    return EXIT_OK


def _load_policy_file(path: str | None) -> Policy:
    if path is None:
        raise MissingInputError("the 'optimal' policy needs --policy POLICY_JSON "
                                "(from the solve subcommand)")
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"policy file not found: {path}")
    with open(p) as fh:
        data = json.load(fh)
    low = data.get("low", data.get("direct_low"))
    high = data.get("high", data.get("direct_high"))
    if low is None or high is None:
        raise MissingInputError(f"policy file {path} lacks low/high thresholds")
    return Policy.band(float(low), float(high))


def _resolve_policies(spec_list, policy_path) -> dict:
    policies = {}
    for spec in spec_list:
        if isinstance(spec, str):
            if spec == "optimal":
                policies[spec] = _load_policy_file(policy_path)
            elif spec == "no_recharge":
                policies[spec] = Policy.no_recharge()
            elif spec == "aggressive":
                policies[spec] = Policy.aggressive()
            else:
                raise ValueError(f"unknown policy name {spec!r}")
        else:
            name = spec.get("name") or f"band_{spec['low']}_{spec['high']}"
            policies[name] = Policy.band(float(spec["low"]), float(spec["high"]))
    return policies


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.set)
    model = _model_from_config(cfg)
    sim = cfg.get("simulate", {})
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    default_policies = ["optimal", "no_recharge", "aggressive",
                        {"name": "heuristic", "low": 0.73, "high": 0.92}]
    policies = _resolve_policies(sim.get("policies", default_policies),
                                 args.policy or sim.get("policy_file"))
    if args.events is not None:
        if not Path(args.events).is_file():
            raise MissingInputError(f"events file not found: {args.events}")
        events = EventSequence.from_csv(args.events)
    else:
        events = generate_events(model.stochastic,
                                 horizon_hours=float(sim.get("horizon_hours", 200.0)),
                                 seed=seed)
    soc0 = float(sim.get("soc0", 0.5))
    frame = compare_policies(policies, events, model, soc0=soc0)
    out = _out_dir(args)
    frame.to_csv(out / "simulation.csv", float_format="%.12g")
    outputs = ["simulation.csv"]
    if args.trajectory:
        for name, policy in policies.items():
            rep = simulate_policy(events, policy, model, soc0=soc0,
                                  include_trajectory=True)
            fname = f"trajectory_{name}.csv"
            rep.trajectory.to_csv(out / fname, index=False, float_format="%.12g")
            outputs.append(fname)
    _write_manifest(out, args, outputs)
    print(f"simulate: {events.n_events} events, {len(policies)} policies")
    return EXIT_OK


def _cmd_plan(args) -> int:
    cfg = _load_config(args.config, args.set)
    model = _model_from_config(cfg)
    plan = _require(cfg, "plan")
    if "capacities_kwh" not in plan:
        raise MissingInputError("plan section lacks 'capacities_kwh'")
    caps = np.asarray(plan["capacities_kwh"], dtype=float)
    sol = cfg.get("solver", {})
    result = expected_cost_vs_capacity(model, caps,
                                       n_grid=int(sol.get("n_grid", 201)),
                                       tol=sol.get("tol"))
    cap_cfg = plan.get("capital", {})
    if "table" in cap_cfg:
        capital = CapitalCostModel.tabulated(float(cap_cfg.get("lam", 1.0)),
                                             cap_cfg["table"]["capacities_kwh"],
                                             cap_cfg["table"]["costs"])
    else:
        capital = CapitalCostModel.affine(float(cap_cfg.get("lam", 1.0)),
                                          fixed=float(cap_cfg.get("fixed", 0.0)),
                                          per_kwh=float(cap_cfg.get("per_kwh", 0.0)))
    weighting = plan.get("weighting", "stationary")
    best = optimal_capacity(result, capital, weighting=weighting)
    out = _out_dir(args)
    frame = result.frame()
    frame["capital_cost"] = capital.scaled(result.capacities())
    frame["total_cost"] = frame["capital_cost"] + result.op_cost(weighting)
    frame.to_csv(out / "planning.csv", index=False, float_format="%.12g")
    _write_json(out / "optimal.json", {
        "capacity_kwh": best.capacity_kwh, "total_cost": best.total_cost,
        "grid_capacity_kwh": best.grid_capacity_kwh, "convex": best.convex,
        "marginal_residual": best.marginal_residual, "weighting": weighting})
    _write_manifest(out, args, ["planning.csv", "optimal.json"])
    print(f"plan: best capacity {best.capacity_kwh:.1f} kWh "
          f"(total cost {best.total_cost:.2f})")
    return EXIT_OK


# ----------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfcbess",
        description="Plan and control battery storage selling primary "
                    "frequency control reserve.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out-dir", required=True, help="directory for outputs")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config entry (JSON-parsed value)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured random seed")
        p.add_argument("--threads", type=int, default=None,
                       help="best-effort cap on linear-algebra threads")

    p_fit = sub.add_parser("fit", help="fit the event model from a frequency trace")
    common(p_fit)
    p_fit.add_argument("--trace", required=True, help="frequency trace CSV")
    p_fit.set_defaults(func=_cmd_fit)

    p_solve = sub.add_parser("solve", help="compute the optimal idle band")
    common(p_solve)
    p_solve.set_defaults(func=_cmd_solve)

    p_sim = sub.add_parser("simulate", help="replay policies against events")
    common(p_sim)
    p_sim.add_argument("--policy", default=None, help="policy.json from solve")
    p_sim.add_argument("--events", default=None, help="events.csv to replay "
                       "(default: synthesize from the model)")
    p_sim.add_argument("--trajectory", action="store_true",
                       help="also write per-event trajectories")
    p_sim.set_defaults(func=_cmd_simulate)

    p_plan = sub.add_parser("plan", help="sweep capacities and size the battery")
    common(p_plan)
    p_plan.set_defaults(func=_cmd_plan)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except TraceParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_TRACE
    except InsufficientEventsError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_EVENTS
    except (ConvergenceError, QuadratureError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except MissingInputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
