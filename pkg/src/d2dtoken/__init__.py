"""Token-incentivized D2D transmission-mode selection.

A device holding tokens decides, slot by slot, whether to buy direct D2D
service for its current traffic or earn tokens by serving others while idle.
This package models that decision problem as a finite MDP, solves it,
verifies the structural properties of the optimal policy (threshold form,
diminishing marginal token value, benefit-ordered cutoffs), learns it
without knowing the environment rates, and simulates both a single device
and a full token economy.
"""

from .config import ConfigError, LoadedModel, build_model, load_model
from .learning import LearningConfig, QLearningAgent, QTable, policy_agreement, q_update, train
from .model import (
    ACCEPT,
    CELLULAR,
    D2D,
    IDLE,
    REFUSE,
    EnvFactors,
    InvalidModelError,
    MdpModel,
    State,
    TrafficModel,
    TrafficType,
    ValidationReport,
    enumerate_states,
    expected_reward,
    make_model,
    successor_distribution,
    transition_prob,
    validate,
)
from .mos import LinkQuality, MosParams, NonPositiveMosError, benefit_from_mos, mos_elastic, mos_video
from .network import (
    EmpiricalRates,
    FixedPointResult,
    NetworkConfig,
    NetworkResult,
    run_fixed_point,
    run_network,
    uniform_pairing,
)
from .sim import SimConfig, SimTrace, SingleUeEnv, build_greedy_policy, run_single, step_single
from .solver import (
    ConcavityReport,
    ConvergenceError,
    DeviationReport,
    InstanceTooLargeError,
    NotThresholdError,
    Policy,
    SolverConfig,
    SolverError,
    SweepResult,
    ThresholdTable,
    ValueFunction,
    ValueIterationSolver,
    bellman_backup,
    brute_force_optimal,
    check_concavity,
    check_monotone_tokens,
    check_one_shot_deviation,
    evaluate_policy_exact,
    extract_thresholds,
    sweep,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "ACCEPT",
    "CELLULAR",
    "D2D",
    "IDLE",
    "REFUSE",
    "ConcavityReport",
    "ConfigError",
    "ConvergenceError",
    "DeviationReport",
    "EmpiricalRates",
    "EnvFactors",
    "FixedPointResult",
    "InstanceTooLargeError",
    "InvalidModelError",
    "LearningConfig",
    "LinkQuality",
    "LoadedModel",
    "MdpModel",
    "MosParams",
    "NetworkConfig",
    "NetworkResult",
    "NonPositiveMosError",
    "NotThresholdError",
    "Policy",
    "QLearningAgent",
    "QTable",
    "SimConfig",
    "SimTrace",
    "SingleUeEnv",
    "SolverConfig",
    "SolverError",
    "State",
    "SweepResult",
    "ThresholdTable",
    "TrafficModel",
    "TrafficType",
    "ValidationReport",
    "ValueFunction",
    "ValueIterationSolver",
    "bellman_backup",
    "benefit_from_mos",
    "brute_force_optimal",
    "build_greedy_policy",
    "build_model",
    "check_concavity",
    "check_monotone_tokens",
    "check_one_shot_deviation",
    "enumerate_states",
    "evaluate_policy_exact",
    "expected_reward",
    "extract_thresholds",
    "load_model",
    "make_model",
    "mos_elastic",
    "mos_video",
    "policy_agreement",
    "q_update",
    "run_fixed_point",
    "run_network",
    "run_single",
    "step_single",
    "successor_distribution",
    "sweep",
    "train",
    "transition_prob",
    "uniform_pairing",
    "validate",
    "value_iteration",
]
