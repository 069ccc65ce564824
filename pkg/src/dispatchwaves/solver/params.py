"""Solver parameter profiles and stopping criteria.

Two named profiles exist: the default profile for large static solves and a
scenario profile with a smaller population, faster penalty cadence and a
reduced operator set, meant for many short solves under tight budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class PopulationParams:
    min_size: int = 25
    generation_size: int = 40
    elite: int = 4
    close: int = 5
    diversity_lb: float = 0.1
    diversity_ub: float = 0.5


@dataclass(frozen=True)
class PenaltyParams:
    init_capacity: float = 20.0
    init_timewarp: float = 6.0
    booster: float = 12.0
    registrations: int = 50
    increase: float = 1.34
    decrease: float = 0.32
    target_feasible: float = 0.43
    min_weight: float = 1.0
    max_weight: float = 100000.0


@dataclass(frozen=True)
class NeighborhoodParams:
    neighbors: int = 40
    weight_wait: float = 0.2
    weight_timewarp: float = 1.0
    symmetric_proximity: bool = True
    symmetric_neighbors: bool = False


@dataclass(frozen=True)
class OperatorToggles:
    exchange10: bool = True
    exchange20: bool = True
    exchange30: bool = True
    exchange11: bool = True
    exchange21: bool = True
    exchange22: bool = True
    two_opt: bool = True
    swap_star: bool = True


@dataclass(frozen=True)
class SolverParams:
    population: PopulationParams = field(default_factory=PopulationParams)
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    neighborhood: NeighborhoodParams = field(default_factory=NeighborhoodParams)
    operators: OperatorToggles = field(default_factory=OperatorToggles)
    repair_probability: float = 0.8
    restart_after: int = 20000

    def validate(self) -> None:
        p = self.population
        if p.min_size < 1 or p.generation_size < 1:
            raise ValueError("population sizes must be >= 1")
        pen = self.penalty
        if not (0.0 < pen.target_feasible < 1.0):
            raise ValueError("target feasible fraction must lie in (0, 1)")
        if not (pen.increase > 1.0 > pen.decrease):
            raise ValueError("penalty factors must satisfy increase > 1 > decrease")


def default_params() -> SolverParams:
    """Profile for one-off static solves (large budget, full operator set)."""
    return SolverParams()


def scenario_params() -> SolverParams:
    """Profile for short scenario solves: small population, quick penalty
    adaptation, only relocate + 2-OPT node operators and SWAP* route moves."""
    return SolverParams(
        population=PopulationParams(min_size=5, generation_size=3, elite=2, close=2),
        penalty=PenaltyParams(registrations=10, increase=1.30, decrease=0.50),
        operators=OperatorToggles(
            exchange10=True,
            exchange20=False,
            exchange30=False,
            exchange11=False,
            exchange21=False,
            exchange22=False,
            two_opt=True,
            swap_star=True,
        ),
    )


@dataclass(frozen=True)
class StopCriterion:
    """Stop when the wall-clock budget or the iteration cap is hit, whichever
    comes first.  Iteration-capped runs with a generous budget are fully
    deterministic; budget-capped runs are reproducible in quality only."""

    budget_ms: int = 1000
    max_iterations: int | None = None

    def validate(self) -> None:
        if self.budget_ms <= 0:
            raise ValueError("budget must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("iteration cap must be >= 1 when given")
