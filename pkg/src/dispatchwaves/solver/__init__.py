"""Hybrid genetic search for static routing instances with dispatch windows."""

from .hgs import crossover, local_search, solve, update_penalty
from .params import (
    NeighborhoodParams,
    OperatorToggles,
    PenaltyParams,
    PopulationParams,
    SolverParams,
    StopCriterion,
    default_params,
    scenario_params,
)

__all__ = [
    "solve",
    "crossover",
    "local_search",
    "update_penalty",
    "SolverParams",
    "StopCriterion",
    "PopulationParams",
    "PenaltyParams",
    "NeighborhoodParams",
    "OperatorToggles",
    "default_params",
    "scenario_params",
]
