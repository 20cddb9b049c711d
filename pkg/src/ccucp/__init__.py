"""Chance-constrained unit commitment: scenario sampling, exact reference
solving, QUBO compilation, simulated annealing and penalty tuning."""

__version__ = "0.1.0"

from .instance import (
    GeneratorParams,
    InitialState,
    FixedDemand,
    GaussianDemand,
    UcpInstance,
    builtin_deterministic_instance,
    builtin_stochastic_instance,
    correlation_regime,
    load_instance,
    save_instance,
    validate,
)
from .sampler import ScenarioSet, sample, load_scenarios, save_scenarios
from .model import Solution, FeasibilityReport, check_feasible, objective, reliability_quota
from .reference import (
    ExactLimitError,
    InfeasibleError,
    solve_deterministic,
    solve_stochastic_exact,
    solve_stochastic_greedy,
)
from .encoding import build_layout, decode_solution, encode_solution, total_binary_variables
from .qubo import (
    PenaltyWeights,
    QuboModel,
    TABLE3_WEIGHTS,
    compile_qubo,
    energy,
    graph_stats,
    penalty_breakdown,
)
from .annealer import AnnealConfig, SampleSet, anneal, best_feasible, default_schedule
from .tuner import TunerConfig, TunerTrace, tune

__all__ = [
    "GeneratorParams",
    "InitialState",
    "FixedDemand",
    "GaussianDemand",
    "UcpInstance",
    "builtin_deterministic_instance",
    "builtin_stochastic_instance",
    "correlation_regime",
    "load_instance",
    "save_instance",
    "validate",
    "ScenarioSet",
    "sample",
    "load_scenarios",
    "save_scenarios",
    "Solution",
    "FeasibilityReport",
    "check_feasible",
    "objective",
    "reliability_quota",
    "ExactLimitError",
    "InfeasibleError",
    "solve_deterministic",
    "solve_stochastic_exact",
    "solve_stochastic_greedy",
    "build_layout",
    "decode_solution",
    "encode_solution",
    "total_binary_variables",
    "PenaltyWeights",
    "QuboModel",
    "TABLE3_WEIGHTS",
    "compile_qubo",
    "energy",
    "graph_stats",
    "penalty_breakdown",
    "AnnealConfig",
    "SampleSet",
    "anneal",
    "best_feasible",
    "default_schedule",
    "TunerConfig",
    "TunerTrace",
    "tune",
]
