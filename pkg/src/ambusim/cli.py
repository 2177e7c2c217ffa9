"""Command line interface.

Three subcommands:

  build-table   solve the per-station fleet chains and cache the cost-rate
                table as CSV, printing the wall time for trend comparisons.
  simulate      run seeded scenarios for one or more policies and fleet
                sizes, writing the delimited result files plus one calls
                file per scenario count.
  report        fold a directory of result files into summary and
                figure-family CSVs and render comparison figures.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 solver or
simulator failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .ctmc import (
    SolverFailure,
    build_preparedness_table,
    calibrate_station_models,
)
from .instances import (
    SETUPS,
    build_instance,
    cost_model_for,
    default_config,
    load_instance_config,
)
from .policies import POLICIES, PolicyParams
from .reporting import (
    build_report,
    call_rows,
    calls_filename,
    result_filename,
    result_rows,
    write_calls_file,
    write_result_file,
)
from .simulator import SimulationFault, run_scenario

DEFAULT_POLICIES = "dummy_queue,markov_preparedness"


class UsageError(Exception):
    """Bad flag values; reported with exit code 2 like argparse errors."""


def _int_list(text: str) -> list:
    try:
        out = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return out


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="instance config JSON; flags below override it")
    p.add_argument("--amb_setup", choices=SETUPS, help="instance and cost-model setup")
    p.add_argument("--nb_bases", type=int, help="use only the first N stations of the layout")


def _add_policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--Gamma", type=float, default=1800.0, help="readiness weight (seconds)")
    p.add_argument(
        "--gamma-scale",
        type=float,
        default=1.0,
        help="scales the queueing-penalty window (base 1800 s)",
    )
    p.add_argument("--busy-fraction", type=float, default=0.4, help="coverage-policy busy odds")
    p.add_argument(
        "--coverage-T", type=float, default=600.0, help="coverage threshold in seconds"
    )


def _build_instance(args):
    if args.config:
        cfg = load_instance_config(args.config)
        if args.amb_setup:
            cfg = dataclasses.replace(cfg, setup=args.amb_setup)
    else:
        cfg = default_config(args.amb_setup or "rj")
    n_used = None
    if args.nb_bases is not None:
        layout = len(cfg.stations) if cfg.stations is not None else cfg.n_stations
        if not 1 <= args.nb_bases <= layout:
            raise UsageError(f"--nb_bases must be in 1..{layout}, got {args.nb_bases}")
        n_used = args.nb_bases
    return cfg, build_instance(cfg, n_stations_used=n_used)


def _make_params(args) -> PolicyParams:
    return PolicyParams(
        prep_weight=args.Gamma,
        queue_window_s=1800.0 * args.gamma_scale,
        busy_fraction=args.busy_fraction,
        coverage_threshold_s=args.coverage_T,
    )


def _table_for(cfg, instance, caps: tuple, cache_path: str):
    cm = cost_model_for(cfg.setup)
    models = calibrate_station_models(instance, cm, cfg.service)
    return build_preparedness_table(models, caps, cache_path=cache_path)


def cmd_build_table(args) -> int:
    cfg, instance = _build_instance(args)
    caps = tuple(args.caps)
    out = args.out or f"{cfg.setup}_table_{len(instance.stations)}_{'x'.join(map(str, caps))}.csv"
    t0 = time.perf_counter()
    table = _table_for(cfg, instance, caps, out)
    elapsed = time.perf_counter() - t0
    n_fleets = 1
    for c in caps:
        n_fleets *= c + 1
    print(
        f"wrote {out}: {len(instance.stations)} stations x {n_fleets} fleet vectors "
        f"= {len(table.values)} entries in {elapsed:.2f}s"
    )
    return 0


def _scenario_worker(payload):
    (instance, cost_model, service, policy, n_amb, seed, horizon, params, table) = payload
    result = run_scenario(
        instance,
        cost_model,
        service,
        policy,
        n_amb,
        seed,
        horizon,
        params=params,
        table=table,
    )
    return result_rows(result), call_rows(result.calls)


def cmd_simulate(args) -> int:
    cfg, instance = _build_instance(args)
    cm = cost_model_for(cfg.setup)
    service = cfg.service
    params = _make_params(args)
    policies = [p for p in args.policies.split(",") if p]
    for p in policies:
        if p not in POLICIES:
            raise UsageError(f"unknown policy {p!r}; known: {', '.join(sorted(POLICIES))}")
    if not policies:
        raise UsageError("--policies must name at least one policy")
    os.makedirs(args.out, exist_ok=True)
    table = None
    if "markov_preparedness" in policies:
        caps = tuple(args.caps)
        cache = args.table or os.path.join(
            args.out,
            f"{cfg.setup}_table_{len(instance.stations)}_{'x'.join(map(str, caps))}.csv",
        )
        table = _table_for(cfg, instance, caps, cache)
    seeds = [args.seed + k for k in range(args.n_scenarios)]
    jobs = []
    for policy in policies:
        for n_amb in args.nb_ambulances:
            for seed in seeds:
                jobs.append(
                    (instance, cm, service, policy, n_amb, seed, args.horizon_s, params, table)
                )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(_scenario_worker, jobs, chunksize=1))
    else:
        outputs = [_scenario_worker(j) for j in jobs]
    calls_written = False
    k = 0
    for policy in policies:
        for n_amb in args.nb_ambulances:
            batch = outputs[k : k + len(seeds)]
            k += len(seeds)
            path = os.path.join(
                args.out, result_filename(cfg.setup, policy, n_amb, args.n_scenarios)
            )
            write_result_file(path, [rows for rows, _ in batch])
            print(f"wrote {path}")
            if not calls_written:
                cpath = os.path.join(args.out, calls_filename(cfg.setup, args.n_scenarios))
                write_calls_file(cpath, [calls for _, calls in batch])
                print(f"wrote {cpath}")
                calls_written = True
    return 0


def cmd_report(args) -> int:
    written = build_report(args.results, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambusim", description="Ambulance dispatch simulation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-table", help="precompute the station cost-rate table")
    _add_instance_args(p)
    p.add_argument("--caps", type=_int_list, default=[3, 3], help="per-type fleet caps, e.g. 3,3")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("simulate", help="run seeded scenarios and write result files")
    _add_instance_args(p)
    _add_policy_args(p)
    p.add_argument("--policies", default=DEFAULT_POLICIES, help="comma-separated policy keys")
    p.add_argument("--n_scenarios", type=_positive_int, default=10)
    p.add_argument(
        "--nb_ambulances", type=_int_list, default=[12], help="fleet sizes, e.g. 8,12,16"
    )
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--horizon_s", type=float, default=86400.0)
    p.add_argument(
        "--caps", type=_int_list, default=[3, 3], help="table caps for markov_preparedness"
    )
    p.add_argument("--table", help="existing cost-rate table CSV to reuse")
    p.add_argument("--jobs", type=int, default=1, help="parallel scenario workers")
    p.add_argument("--out", default="results", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize result files and render figures")
    p.add_argument("--results", default="results", help="directory of result files")
    p.add_argument("--out", help="output directory (defaults to --results)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    except SimulationFault as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
