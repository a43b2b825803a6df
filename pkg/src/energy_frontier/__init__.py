"""Time-energy frontiers of pipeline-parallel training iterations."""

from .costmodel import FrequencyProfile, ProfilePoint, ProfileSet, fit_exp, pareto_filter, synth_profile
from .dag import Computation, Kind, NodeDag, build_1f1b, build_gpipe, min_imbalance_partition
from .frontier import (
    EnergySchedule,
    Frontier,
    OptimizationError,
    PlanningProblem,
    discover_frontier,
    discretize,
    get_next_schedule,
    lookup,
)

__all__ = [
    "Computation",
    "EnergySchedule",
    "FrequencyProfile",
    "Frontier",
    "Kind",
    "NodeDag",
    "OptimizationError",
    "PlanningProblem",
    "ProfilePoint",
    "ProfileSet",
    "build_1f1b",
    "build_gpipe",
    "discover_frontier",
    "discretize",
    "fit_exp",
    "get_next_schedule",
    "lookup",
    "min_imbalance_partition",
    "pareto_filter",
    "synth_profile",
]
