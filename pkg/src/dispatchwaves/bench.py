"""Benchmark harness.

Runs policy x instance-class matrices, computes hindsight gaps, aggregates
mean-gap tables with paired significance tests, and produces sweep series
over scenario budgets or consensus iterations, plus the limited-fleet
comparison.  Everything is deterministic given the seeds when iteration
caps bound the solves.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .env import Action, EpochConfig, Episode, PrimaryPlan, plan_primaries
from .instgen import EpisodeConfigRecord, builtin_topology
from .model import ModelError
from .policies import IcdConfig, decide
from .solver import (
    NeighborhoodParams,
    PenaltyParams,
    PopulationParams,
    SolverParams,
    StopCriterion,
    scenario_params,
    solve,
)

logger = logging.getLogger("dispatchwaves.bench")

BENCHMARK_POLICIES = ("rh", "dshh", "icd-postpone", "icd-double",
                      "icd-hamming")
SIGNIFICANCE_LEVEL = 0.05
CSV_HEADER = "# dispatchwaves-bench v1; times in ms, costs in integer units"


@dataclass(frozen=True)
class BenchProfile:
    """All time budgets and solver profiles of one harness run."""

    icd: IcdConfig
    direct_stop: StopCriterion
    direct_params: SolverParams
    hindsight_stop: StopCriterion
    hindsight_params: SolverParams
    expected_total: float = 600.0


def full_profile() -> BenchProfile:
    """Full-scale budget split: 90 s consensus, 30 s routing, 600 s hindsight."""
    return BenchProfile(
        icd=IcdConfig(),
        direct_stop=StopCriterion(budget_ms=30000),
        direct_params=scenario_params(),
        hindsight_stop=StopCriterion(budget_ms=600000),
        hindsight_params=SolverParams(),
        expected_total=600.0,
    )


def _desk_solver_params() -> SolverParams:
    return dataclasses.replace(scenario_params(),
                               neighborhood=NeighborhoodParams(neighbors=10))


def desk_profile() -> BenchProfile:
    """Small preset sized for a single core: epochs take ~10 s.

    All solves are iteration-capped, sized so a consensus pass costs about
    7.5 s (10 scenarios x 3 iterations) plus ~2.5 s of action routing on
    the reference machine.  The millisecond budgets are generous safety
    ceilings that normal runs never hit, which keeps repeated runs with
    the same seeds bit-identical.
    """
    desk = _desk_solver_params()
    hindsight = dataclasses.replace(
        desk,
        population=PopulationParams(min_size=8, generation_size=8, elite=2,
                                    close=3),
        penalty=PenaltyParams(registrations=20, increase=1.30, decrease=0.50),
    )
    return BenchProfile(
        icd=IcdConfig(scenarios=10, iterations=3, scenario_budget_ms=5000,
                      scenario_max_iterations=8, action_budget_ms=30000,
                      solver_params=desk),
        direct_stop=StopCriterion(budget_ms=30000, max_iterations=60),
        direct_params=desk,
        hindsight_stop=StopCriterion(budget_ms=120000, max_iterations=150),
        hindsight_params=hindsight,
        expected_total=150.0,
    )


@dataclass(frozen=True)
class RunRecord:
    """One (episode, policy) outcome."""

    label: str
    topology: str
    source: str
    arrival: str
    tw_variant: str
    expected_total: float
    episode_seed: int
    policy: str
    fleet_mode: str
    total_cost: int
    hindsight_cost: int
    gap_pct: float
    epoch_ms: tuple[float, ...]
    secondary_routes: int
    status: str = "ok"

    @staticmethod
    def failed(cfg: EpisodeConfigRecord, policy: str, fleet_mode: str,
               message: str) -> "RunRecord":
        return RunRecord(label=cfg.class_spec.label,
                         topology=cfg.class_spec.topology, source=cfg.source,
                         arrival=cfg.class_spec.arrival,
                         tw_variant=cfg.class_spec.tw_variant,
                         expected_total=cfg.class_spec.expected_total,
                         episode_seed=cfg.seed, policy=policy,
                         fleet_mode=fleet_mode, total_cost=-1,
                         hindsight_cost=-1, gap_pct=float("nan"),
                         epoch_ms=(), secondary_routes=0,
                         status=f"failed: {message}")


def episode_config(cfg: EpisodeConfigRecord, profile: BenchProfile,
                   fleet_mode: str = "unlimited",
                   planned_primaries: Optional[tuple[int, ...]] = None,
                   ) -> EpochConfig:
    return EpochConfig(topology=builtin_topology(cfg.source),
                       class_spec=cfg.class_spec, fleet_mode=fleet_mode,
                       planned_primaries=planned_primaries,
                       direct_stop=profile.direct_stop,
                       direct_params=profile.direct_params)


def play_episode(config: EpochConfig, seed: int, policy: str,
                 icd: IcdConfig,
                 replay_routes: Optional[PrimaryPlan] = None) -> Episode:
    """Run one policy through one episode and return the finished episode."""
    episode = Episode(config, seed)
    state = episode.reset()
    t = 0
    while True:
        started = time.perf_counter()
        if policy == "greedy" and replay_routes is not None:
            action = Action(dispatch=state.ids(), primaries=state.primaries)
            result = episode.step(action, routes=replay_routes.routes[t])
        else:
            action = decide(policy, state, config, icd, seed=seed)
            result = episode.step(action)
        result.record["epoch_total_ms"] = round(
            (time.perf_counter() - started) * 1000.0, 1)
        t += 1
        if result.state is None:
            return episode
        state = result.state


def _hindsight_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 0x41D]).generate_state(1)[0])


def solve_hindsight(episode: Episode, profile: BenchProfile,
                    stop: Optional[StopCriterion] = None) -> int:
    instance = episode.hindsight_instance()
    sol = solve(instance, profile.hindsight_params,
                stop or profile.hindsight_stop,
                seed=_hindsight_seed(episode.seed))
    return sol.cost


def _make_record(cfg: EpisodeConfigRecord, policy: str, episode: Episode,
                 hindsight_cost: int, fleet_mode: str) -> RunRecord:
    gap = 100.0 * (episode.total_cost - hindsight_cost) / hindsight_cost
    return RunRecord(
        label=cfg.class_spec.label, topology=cfg.class_spec.topology,
        source=cfg.source, arrival=cfg.class_spec.arrival,
        tw_variant=cfg.class_spec.tw_variant,
        expected_total=cfg.class_spec.expected_total,
        episode_seed=cfg.seed, policy=policy, fleet_mode=fleet_mode,
        total_cost=episode.total_cost, hindsight_cost=hindsight_cost,
        gap_pct=gap,
        epoch_ms=tuple(r.get("epoch_total_ms", r["solve_ms"])
                       for r in episode.records),
        secondary_routes=sum(r.get("secondary_used", 0)
                             for r in episode.records))


def run_matrix(configs: Sequence[EpisodeConfigRecord],
               policies: Sequence[str], profile: BenchProfile,
               progress: Optional[Callable[[str], None]] = None,
               ) -> list[RunRecord]:
    """One record per (episode config, policy).

    All policies of one episode config see the identical realized request
    stream, and the hindsight problem is solved once per realization and
    shared across them.
    """
    if not configs or not policies:
        raise ModelError("empty benchmark matrix")
    records: list[RunRecord] = []
    for ci, cfg in enumerate(configs):
        config = episode_config(cfg, profile)
        hindsight_cost: Optional[int] = None
        for policy in policies:
            try:
                episode = play_episode(config, cfg.seed, policy, profile.icd)
                if hindsight_cost is None:
                    hindsight_cost = solve_hindsight(episode, profile)
                records.append(_make_record(cfg, policy, episode,
                                            hindsight_cost, "unlimited"))
            except ModelError as exc:
                logger.warning("episode %s policy %s failed: %s",
                               cfg.to_line(), policy, exc)
                records.append(RunRecord.failed(cfg, policy, "unlimited",
                                                str(exc)))
        if progress is not None:
            progress(f"[{ci + 1}/{len(configs)}] {cfg.class_spec.label} "
                     f"seed {cfg.seed} done")
    return records


# -- aggregation -------------------------------------------------------


@dataclass(frozen=True)
class TableRow:
    label: str
    count: int
    means: dict[str, float]
    best_policy: str
    significant: bool
    p_values: dict[str, float]
    degenerate: tuple[str, ...] = ()


@dataclass(frozen=True)
class AggregateTable:
    policies: tuple[str, ...]
    rows: tuple[TableRow, ...]

    def render_markdown(self) -> str:
        head = "| class | n | " + " | ".join(self.policies) + " |"
        sep = "|---" * (len(self.policies) + 2) + "|"
        lines = [head, sep]
        for row in self.rows:
            cells = []
            for p in self.policies:
                mean = row.means.get(p)
                cell = "-" if mean is None else f"{mean:.2f}"
                if p == row.best_policy:
                    cell = f"**{cell}**" + ("*" if row.significant else "")
                cells.append(cell)
            lines.append(f"| {row.label} | {row.count} | "
                         + " | ".join(cells) + " |")
        lines.append("")
        lines.append("Mean percentage gap to the shared hindsight solution; "
                     "bold marks the row best, an asterisk means the best "
                     "beats every other policy in paired two-sided t-tests "
                     f"with Bonferroni correction at the "
                     f"{SIGNIFICANCE_LEVEL} level.")
        return "\n".join(lines)

    def render_csv(self) -> str:
        lines = [CSV_HEADER,
                 "label,count,policy,mean_gap_pct,best,significant,p_value"]
        for row in self.rows:
            for p in self.policies:
                mean = row.means.get(p)
                if mean is None:
                    continue
                lines.append(
                    f"{row.label},{row.count},{p},{mean:.4f},"
                    f"{int(p == row.best_policy)},"
                    f"{int(p == row.best_policy and row.significant)},"
                    f"{row.p_values.get(p, float('nan')):.6f}")
        return "\n".join(lines) + "\n"


def _paired_p(best: list[float], other: list[float]) -> tuple[float, bool]:
    """Two-sided paired t-test p-value; degenerate variance reports 1."""
    diffs = np.asarray(best) - np.asarray(other)
    if len(diffs) < 2 or float(np.ptp(diffs)) == 0.0:
        return 1.0, True
    result = stats.ttest_rel(best, other)
    p = float(result.pvalue)
    if np.isnan(p):
        return 1.0, True
    return p, False


def aggregate_table(records: Sequence[RunRecord],
                    group_overall: bool = True) -> AggregateTable:
    """Class x policy mean-gap table with paired significance marks."""
    ok = sorted((r for r in records if r.status == "ok"),
                key=lambda r: (r.label, r.policy, r.episode_seed,
                               r.fleet_mode))
    if not ok:
        raise ModelError("no successful records to aggregate")
    policies = tuple(sorted({r.policy for r in ok}))
    labels = sorted({r.label for r in ok})
    groups: list[tuple[str, list[RunRecord]]] = [
        (lab, [r for r in ok if r.label == lab]) for lab in labels]
    if group_overall and len(labels) > 1:
        groups.append(("overall", ok))
    rows = []
    for label, recs in groups:
        # Key episodes by (label, seed) so the overall row still pairs
        # correctly if two classes happen to share a seed.
        by_policy: dict[str, dict[tuple, float]] = {p: {} for p in policies}
        for r in recs:
            by_policy[r.policy][(r.label, r.episode_seed)] = r.gap_pct
        means = {p: float(np.mean(list(v.values())))
                 for p, v in by_policy.items() if v}
        best = min(means, key=means.get)
        # pair on common episodes for the tests
        p_values: dict[str, float] = {}
        degenerate: list[str] = []
        significant = len(means) > 1
        n_tests = max(len(means) - 1, 1)
        for p in means:
            if p == best:
                continue
            shared = sorted(set(by_policy[best]) & set(by_policy[p]))
            if len(shared) < 2:
                p_values[p] = 1.0
                significant = False
                continue
            pv, degen = _paired_p([by_policy[best][s] for s in shared],
                                  [by_policy[p][s] for s in shared])
            p_values[p] = pv
            if degen:
                degenerate.append(p)
            if pv >= SIGNIFICANCE_LEVEL / n_tests:
                significant = False
        count = max((len(v) for v in by_policy.values() if v), default=0)
        rows.append(TableRow(label=label, count=count, means=means,
                             best_policy=best, significant=significant,
                             p_values=p_values,
                             degenerate=tuple(degenerate)))
    return AggregateTable(policies=policies, rows=tuple(rows))


# -- sweeps ------------------------------------------------------------


SWEEP_DIMENSIONS = ("scenario-budget", "iterations")


def sweep(dimension: str, values: Sequence[float],
          configs: Sequence[EpisodeConfigRecord], policies: Sequence[str],
          profile: BenchProfile,
          progress: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Mean gap per (value, policy) along one tuning dimension.

    The scenario-budget sweep scales the per-scenario time limit (and the
    iteration cap with it, to keep capped runs proportional); the
    iterations sweep varies the consensus iteration count.
    """
    if dimension not in SWEEP_DIMENSIONS:
        raise ModelError(f"unknown sweep dimension {dimension!r}; "
                         f"expected one of {SWEEP_DIMENSIONS}")
    series: list[dict] = []
    for value in values:
        icd = profile.icd
        if dimension == "scenario-budget":
            ratio = (1000.0 * value) / icd.scenario_budget_ms
            cap = icd.scenario_max_iterations
            icd = dataclasses.replace(
                icd, scenario_budget_ms=int(1000 * value),
                scenario_max_iterations=(None if cap is None
                                         else max(1, round(cap * ratio))))
        else:
            icd = dataclasses.replace(icd, iterations=int(value))
        sub = dataclasses.replace(profile, icd=icd)
        records = run_matrix(configs, policies, sub)
        table = aggregate_table(records, group_overall=True)
        overall = table.rows[-1]
        for policy in policies:
            if policy in overall.means:
                series.append({"dimension": dimension, "value": value,
                               "policy": policy,
                               "mean_gap_pct": overall.means[policy],
                               "episodes": overall.count})
        if progress is not None:
            progress(f"{dimension}={value} done")
    return series


def sweep_csv(series: Sequence[dict]) -> str:
    lines = [CSV_HEADER, "dimension,value,policy,mean_gap_pct,episodes"]
    for row in series:
        lines.append(f"{row['dimension']},{row['value']:g},{row['policy']},"
                     f"{row['mean_gap_pct']:.4f},{row['episodes']}")
    return "\n".join(lines) + "\n"


# -- limited fleet -----------------------------------------------------


def fleet_comparison(configs: Sequence[EpisodeConfigRecord],
                     policies: Sequence[str], profile: BenchProfile,
                     progress: Optional[Callable[[str], None]] = None,
                     ) -> list[RunRecord]:
    """Each policy under unlimited and limited fleets, same realizations.

    Primary vehicle counts come from an immediate-dispatch plan per
    episode; the limited-fleet greedy run replays that plan's routes, so
    it never hires a secondary vehicle.  Gaps in both modes use the
    unlimited-fleet hindsight cost.
    """
    records: list[RunRecord] = []
    for ci, cfg in enumerate(configs):
        base = episode_config(cfg, profile)
        plan = plan_primaries(base, cfg.seed)
        limited = episode_config(cfg, profile, fleet_mode="limited",
                                 planned_primaries=plan.counts)
        hindsight_cost: Optional[int] = None
        for policy in policies:
            for mode, config in (("unlimited", base), ("limited", limited)):
                try:
                    replay = plan if (policy == "greedy"
                                      and mode == "limited") else None
                    episode = play_episode(config, cfg.seed, policy,
                                           profile.icd, replay_routes=replay)
                    if hindsight_cost is None:
                        hindsight_cost = solve_hindsight(episode, profile)
                    records.append(_make_record(cfg, policy, episode,
                                                hindsight_cost, mode))
                except ModelError as exc:
                    logger.warning("fleet comparison %s/%s/%s failed: %s",
                                   cfg.to_line(), policy, mode, exc)
                    records.append(RunRecord.failed(cfg, policy, mode,
                                                    str(exc)))
        if progress is not None:
            progress(f"[{ci + 1}/{len(configs)}] fleet pair done")
    return records


def fleet_table(records: Sequence[RunRecord]) -> str:
    """Markdown summary of mean gaps per policy and fleet mode."""
    ok = sorted((r for r in records if r.status == "ok"),
                key=lambda r: (r.policy, r.fleet_mode, r.label,
                               r.episode_seed))
    policies = sorted({r.policy for r in ok})
    lines = ["| policy | unlimited gap % | limited gap % | "
             "secondary routes |", "|---|---|---|---|"]
    for policy in policies:
        cells = []
        for mode in ("unlimited", "limited"):
            gaps = [r.gap_pct for r in ok
                    if r.policy == policy and r.fleet_mode == mode]
            cells.append(f"{float(np.mean(gaps)):.2f}" if gaps else "-")
        secondary = sum(r.secondary_routes for r in ok
                        if r.policy == policy and r.fleet_mode == "limited")
        lines.append(f"| {policy} | {cells[0]} | {cells[1]} | {secondary} |")
    return "\n".join(lines)


def records_csv(records: Sequence[RunRecord]) -> str:
    lines = [CSV_HEADER,
             "label,source,policy,fleet_mode,episode_seed,total_cost,"
             "hindsight_cost,gap_pct,secondary_routes,status"]
    for r in records:
        lines.append(f"{r.label},{r.source},{r.policy},{r.fleet_mode},"
                     f"{r.episode_seed},{r.total_cost},{r.hindsight_cost},"
                     f"{r.gap_pct:.4f},{r.secondary_routes},{r.status}")
    return "\n".join(lines) + "\n"
