"""Command line front end.

Subcommands cover the full workflow: generating benchmark episodes,
solving a single static instance, simulating one episode under a policy,
running policy x class benchmark matrices, parameter sweeps, and the
limited-fleet comparison.  Tabular results go to stdout as markdown;
record-level data is written as CSV.  Exit status is nonzero whenever a
run reports a failure or an invariant does not hold.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Optional, Sequence

from . import bench
from .bench import BENCHMARK_POLICIES, BenchProfile, desk_profile, full_profile
from .env import Episode, plan_primaries, realize_requests, realized_instance
from .fileio import (
    read_instance,
    summary_record,
    write_instance,
    write_routes,
    write_summary,
)
from .instgen import (
    EpisodeConfigRecord,
    GenerationError,
    InstanceClassSpec,
    build_class_matrix,
    full_factorial,
)
from .model import ModelError, evaluate_solution
from .policies import POLICY_NAMES, decide
from .solver import solve
from .solver.params import StopCriterion, default_params, scenario_params

logger = logging.getLogger("dispatchwaves.cli")


def parse_class_label(label: str, default_total: float) -> InstanceClassSpec:
    """Parse 'R-HOM-TW2' or 'R-HOM-TW2-600' into a class spec."""
    parts = label.split("-")
    if len(parts) == 4:
        group, arrival, variant, total = parts
        return InstanceClassSpec(group, arrival, variant, float(total))
    if len(parts) == 3:
        group, arrival, variant = parts
        return InstanceClassSpec(group, arrival, variant, default_total)
    raise GenerationError(f"cannot parse class label {label!r}")


def add_matrix_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classes", nargs="*", default=None, metavar="LABEL",
                   help="class labels like R-HOM-TW2 (scale optional)")
    p.add_argument("--all-classes", action="store_true",
                   help="use the full topology x arrival x window factorial")
    p.add_argument("--expected-total", type=float, default=None,
                   help="expected requests per episode (default: profile)")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--master-seed", type=int, default=0)


def add_profile_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--scenarios", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lookahead", type=int, default=None)
    p.add_argument("--eps-dispatch", type=float, default=None)
    p.add_argument("--eps-postpone", type=float, default=None)
    p.add_argument("--scenario-budget-ms", type=int, default=None)
    p.add_argument("--scenario-max-iterations", type=int, default=None)
    p.add_argument("--action-budget-ms", type=int, default=None)
    p.add_argument("--hindsight-budget-ms", type=int, default=None)
    p.add_argument("--hindsight-max-iterations", type=int, default=None)


def build_profile(args: argparse.Namespace) -> BenchProfile:
    prof = desk_profile() if args.profile == "desk" else full_profile()
    icd_overrides = {}
    for name in ("scenarios", "iterations", "lookahead", "eps_dispatch",
                 "eps_postpone", "scenario_budget_ms",
                 "scenario_max_iterations", "action_budget_ms"):
        value = getattr(args, name)
        if value is not None:
            icd_overrides[name] = value
    if icd_overrides:
        prof = dataclasses.replace(
            prof, icd=dataclasses.replace(prof.icd, **icd_overrides))
    if args.hindsight_budget_ms is not None \
            or args.hindsight_max_iterations is not None:
        stop = StopCriterion(
            budget_ms=args.hindsight_budget_ms
            or prof.hindsight_stop.budget_ms,
            max_iterations=args.hindsight_max_iterations
            if args.hindsight_max_iterations is not None
            else prof.hindsight_stop.max_iterations)
        prof = dataclasses.replace(prof, hindsight_stop=stop)
    if args.expected_total is not None:
        prof = dataclasses.replace(prof, expected_total=args.expected_total)
    return prof


def matrix_configs(args: argparse.Namespace,
                   profile: BenchProfile) -> list[EpisodeConfigRecord]:
    total = args.expected_total if args.expected_total is not None \
        else profile.expected_total
    if args.all_classes:
        specs = full_factorial(total)
    elif args.classes:
        specs = [parse_class_label(lbl, total) for lbl in args.classes]
    else:
        raise GenerationError("pass --classes or --all-classes")
    return build_class_matrix(specs, replications=args.replications,
                              master_seed=args.master_seed)


def write_text(path: Optional[str], text: str) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


# -- subcommands --------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    profile = build_profile(args)
    configs = matrix_configs(args, profile)
    lines = [cfg.to_line() for cfg in configs]
    manifest = args.manifest or "episodes.txt"
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(configs)} episode configs to {manifest}")
    if args.instances_dir:
        import os
        os.makedirs(args.instances_dir, exist_ok=True)
        for cfg in configs:
            config = bench.episode_config(cfg, profile)
            reqs = realize_requests(config, cfg.seed)
            inst = realized_instance(config, reqs)
            name = f"{cfg.class_spec.label}-{cfg.seed}"
            path = os.path.join(args.instances_dir, name + ".txt")
            write_instance(path, inst, name=name)
        print(f"wrote {len(configs)} instance files to {args.instances_dir}")
    return 0


def cmd_solve_static(args: argparse.Namespace) -> int:
    instance = read_instance(args.instance)
    params = scenario_params() if args.params == "scenario" \
        else default_params()
    stop = StopCriterion(budget_ms=args.budget_ms,
                         max_iterations=args.max_iterations)
    import time
    started = time.perf_counter()
    solution = solve(instance, params, stop, seed=args.seed)
    runtime_ms = (time.perf_counter() - started) * 1000.0
    check = evaluate_solution(
        instance,
        [list(r.visits) for r in solution.routes],
        [r.vehicle_class for r in solution.routes])
    if check.cost != solution.cost or check.feasible != solution.feasible:
        print("invariant violation: reported solution does not re-evaluate "
              f"to its cost ({solution.cost} vs {check.cost})",
              file=sys.stderr)
        return 2
    record = summary_record(solution, runtime_ms=runtime_ms,
                            instance=args.instance, seed=args.seed)
    print(json.dumps(record))
    if args.routes_out:
        write_routes(args.routes_out, solution)
    if args.summary_out:
        write_summary(args.summary_out, record)
    return 0 if solution.feasible else 3


def cmd_simulate(args: argparse.Namespace) -> int:
    profile = build_profile(args)
    total = args.expected_total if args.expected_total is not None \
        else profile.expected_total
    spec = parse_class_label(args.klass, total)
    cfg = EpisodeConfigRecord(class_spec=spec, source=args.source
                              or spec.topology + "1", seed=args.seed)
    planned = None
    if args.fleet == "limited":
        base = bench.episode_config(cfg, profile)
        planned = plan_primaries(base, cfg.seed).counts
    config = bench.episode_config(cfg, profile, fleet_mode=args.fleet,
                                  planned_primaries=planned)
    episode = Episode(config, cfg.seed)
    state = episode.reset()
    while state is not None:
        action = decide(args.policy, state, config, profile.icd,
                        seed=cfg.seed)
        result = episode.step(action)
        state = result.state
        logger.info("epoch %d cost %d", result.record["epoch"],
                    result.record["cost"])
    hindsight_cost = None
    if args.hindsight:
        hindsight_cost = bench.solve_hindsight(episode, profile)
    if args.log:
        with open(args.log, "w") as fh:
            episode.write_log(fh, hindsight_cost=hindsight_cost)
    summary = {"policy": args.policy, "class": spec.label,
               "seed": cfg.seed, "total_cost": episode.total_cost,
               "requests": len(episode.realized)}
    if hindsight_cost is not None:
        summary["hindsight_cost"] = hindsight_cost
        summary["gap_pct"] = round(
            100.0 * (episode.total_cost - hindsight_cost) / hindsight_cost,
            3)
    print(json.dumps(summary))
    epochs = config.num_epochs
    if episode.invariant_checks["must_subset"] != epochs:
        print("invariant violation: not every epoch was checked",
              file=sys.stderr)
        return 2
    return 0


def run_failed(records) -> bool:
    bad = [r for r in records if r.status != "ok"]
    for r in bad:
        print(f"failed: {r.label} seed {r.episode_seed} policy {r.policy}: "
              f"{r.status}", file=sys.stderr)
    return bool(bad)


def cmd_benchmark(args: argparse.Namespace) -> int:
    profile = build_profile(args)
    configs = matrix_configs(args, profile)
    policies = tuple(args.policies) if args.policies \
        else BENCHMARK_POLICIES
    progress = logger.info if args.verbose else None
    records = bench.run_matrix(configs, policies, profile,
                               progress=progress)
    csv_text = bench.records_csv(records)
    write_text(args.csv_out, csv_text)
    ok = [r for r in records if r.status == "ok"]
    if ok:
        table = bench.aggregate_table(ok)
        markdown = table.render_markdown()
        print(markdown)
        write_text(args.markdown_out, markdown)
    negative = [r for r in ok if r.gap_pct < -args.gap_slack_pct]
    for r in negative:
        print(f"flag: negative gap {r.gap_pct:.2f}% on {r.label} "
              f"seed {r.episode_seed} policy {r.policy}", file=sys.stderr)
    if run_failed(records) or negative:
        return 2
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    profile = build_profile(args)
    configs = matrix_configs(args, profile)
    policies = tuple(args.policies) if args.policies \
        else BENCHMARK_POLICIES
    values = [float(v) for v in args.values.split(",")]
    if args.dimension == "iterations":
        values = [int(v) for v in values]
    progress = logger.info if args.verbose else None
    series = bench.sweep(args.dimension, values, configs, policies, profile,
                         progress=progress)
    csv_text = bench.sweep_csv(series)
    print(csv_text)
    write_text(args.csv_out, csv_text)
    return 0


def cmd_fleet_compare(args: argparse.Namespace) -> int:
    profile = build_profile(args)
    configs = matrix_configs(args, profile)
    policies = tuple(args.policies) if args.policies \
        else ("greedy",) + BENCHMARK_POLICIES
    progress = logger.info if args.verbose else None
    records = bench.fleet_comparison(configs, policies, profile,
                                     progress=progress)
    write_text(args.csv_out, bench.records_csv(records))
    markdown = bench.fleet_table([r for r in records if r.status == "ok"])
    print(markdown)
    write_text(args.markdown_out, markdown)
    greedy_limited = [r for r in records if r.policy == "greedy"
                      and r.fleet_mode == "limited" and r.status == "ok"]
    hired = [r for r in greedy_limited if r.secondary_routes > 0]
    for r in hired:
        print(f"invariant violation: greedy replay hired "
              f"{r.secondary_routes} secondaries on {r.label} seed "
              f"{r.episode_seed}", file=sys.stderr)
    if run_failed(records) or hired:
        return 2
    return 0


# -- parser -------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatchwaves",
        description="Dispatch-wave routing: instances, solver, simulation, "
                    "benchmarks")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write episode configs and "
                       "full-information instance files")
    add_matrix_args(p)
    add_profile_args(p)
    p.add_argument("--manifest", default=None,
                   help="episode config list path (default episodes.txt)")
    p.add_argument("--instances-dir", default=None,
                   help="also materialize one instance file per episode")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve-static", help="solve one instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--budget-ms", type=int, default=30_000)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", choices=("default", "scenario"),
                   default="default")
    p.add_argument("--routes-out", default=None)
    p.add_argument("--summary-out", default=None)
    p.set_defaults(func=cmd_solve_static)

    p = sub.add_parser("simulate", help="run one episode under one policy")
    p.add_argument("--class", dest="klass", required=True, metavar="LABEL")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--policy", choices=POLICY_NAMES, required=True)
    p.add_argument("--source", default=None,
                   help="topology source name (default: first of the group)")
    p.add_argument("--fleet", choices=("unlimited", "limited"),
                   default="unlimited")
    p.add_argument("--hindsight", action="store_true",
                   help="solve the hindsight problem and report the gap")
    p.add_argument("--log", default=None, help="episode JSONL log path")
    add_profile_args(p)
    p.add_argument("--expected-total", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run a policy x class matrix")
    add_matrix_args(p)
    add_profile_args(p)
    p.add_argument("--policies", nargs="*", choices=POLICY_NAMES,
                   default=None)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--markdown-out", default=None)
    p.add_argument("--gap-slack-pct", type=float, default=0.5,
                   help="tolerated negative gap before flagging")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep", help="sweep scenario budget or iterations")
    p.add_argument("--dimension", choices=bench.SWEEP_DIMENSIONS,
                   required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0.25,0.5,1,4")
    add_matrix_args(p)
    add_profile_args(p)
    p.add_argument("--policies", nargs="*", choices=POLICY_NAMES,
                   default=None)
    p.add_argument("--csv-out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fleet-compare",
                       help="unlimited vs limited fleet comparison")
    add_matrix_args(p)
    add_profile_args(p)
    p.add_argument("--policies", nargs="*", choices=POLICY_NAMES,
                   default=None)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--markdown-out", default=None)
    p.set_defaults(func=cmd_fleet_compare)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
