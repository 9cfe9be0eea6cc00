"""Command-line front end.

Exit codes: 0 success, 2 infeasible instance, 3 truncated convergence,
4 bad config or arguments.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from .association import events_to_csv
from .bandwidth import InfeasibleBackhaulError
from .config import ConfigError, SystemConfig, apply_overrides, load_config
from .experiments import PRESETS, run_experiment
from .link_model import report_to_csv
from .orchestrator import SolverConfig, three_stage_solve
from .power import QosInfeasibleError
from .scenario import generate_scenario
from .validation import (
    association_oracle_check,
    bandwidth_agreement_check,
    power_oracle_check,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_TRUNCATED = 3
EXIT_BAD_CONFIG = 4


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--override", action="append", default=[],
                        metavar="FIELD=VALUE",
                        help="override any config field; repeatable")
    for f in fields(SystemConfig):
        parser.add_argument(f"--{f.name}", default=None, metavar="V",
                            help=argparse.SUPPRESS)


def _build_config(args) -> SystemConfig:
    config = load_config(args.config) if getattr(args, "config", None) else SystemConfig()
    overrides = {}
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"--override expects FIELD=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for f in fields(SystemConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if getattr(args, "seed_flag", None) is not None:
        overrides["seed"] = args.seed_flag
    if overrides:
        config = apply_overrides(config, overrides)
    return config.validate()


def _cmd_simulate(args) -> int:
    config = _build_config(args)
    scenario = generate_scenario(config)
    association, allocation, trace = three_stage_solve(
        scenario, SolverConfig())
    report = trace.final_report
    print(f"utility={report.total_utility!r} eta={allocation.eta!r} "
          f"omega={report.omega!r} status={trace.status}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        trace.to_csv(os.path.join(args.out, "solve_trace.csv"))
        report_to_csv(report, os.path.join(args.out, "utility_report.csv"))
        with open(os.path.join(args.out, "scenario.json"), "w", encoding="utf-8") as fh:
            fh.write(scenario.to_json())
    return EXIT_OK if trace.status == "converged" else EXIT_TRUNCATED


def _cmd_experiment(args) -> int:
    if args.preset not in PRESETS:
        print(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}",
              file=sys.stderr)
        return EXIT_BAD_CONFIG
    preset = PRESETS[args.preset]
    rows = run_experiment(preset, out_dir=args.out, reps=args.reps,
                          jobs=args.jobs, timing=args.timing)
    failures = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} rows ({len(failures)} failed) -> "
          f"{os.path.join(args.out, preset.name + '.csv') if args.out else 'stdout only'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    ok = True
    if args.oracle == "association":
        records = association_oracle_check(num_instances=args.seeds)
        ratios = np.array([r["ratio"] for r in records])
        hit = float((ratios >= 0.95).mean())
        ok = hit >= 0.90
        print(f"association oracle: {hit:.0%} of {len(records)} instances within "
              f"95% of optimum -> {'pass' if ok else 'FAIL'}")
    elif args.oracle == "power":
        records = power_oracle_check(num_instances=args.seeds)
        worst = max(r["relative_gap"] for r in records)
        ok = worst <= 0.01
        print(f"power oracle: worst grid gap {worst:.3e} over {len(records)} "
              f"instances -> {'pass' if ok else 'FAIL'}")
    else:
        records = bandwidth_agreement_check(num_instances=args.seeds)
        worst = max(r["difference"] for r in records)
        ok = worst <= 1e-6
        print(f"bandwidth agreement: worst |closed-bisection| {worst:.3e} over "
              f"{len(records)} instances -> {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noma-hetnet")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="solve one snapshot")
    sim.add_argument("--config", default=None, help="JSON config file")
    sim.add_argument("--seed", dest="seed_flag", default=None, help="snapshot seed")
    sim.add_argument("--out", default=None, help="output directory for CSVs")
    _add_config_flags(sim)
    sim.set_defaults(func=_cmd_simulate)

    exp = sub.add_parser("experiment", help="run a preset sweep")
    exp.add_argument("--preset", required=True)
    exp.add_argument("--out", default=None)
    exp.add_argument("--reps", type=int, default=None, help="seeds per sweep point")
    exp.add_argument("--jobs", type=int, default=1, help="worker processes")
    exp.add_argument("--timing", action="store_true",
                     help="append the nondeterministic runtime column")
    exp.set_defaults(func=_cmd_experiment)

    val = sub.add_parser("validate", help="cross-check a stage against its oracle")
    val.add_argument("--oracle", required=True,
                     choices=("association", "power", "bandwidth"))
    val.add_argument("--seeds", type=int, default=20)
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (InfeasibleBackhaulError, QosInfeasibleError) as exc:
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
