"""Planning and control of battery storage selling frequency reserve.

The package models a battery that holds primary frequency control
reserve: grid-frequency excursions force energy deployments, and the
controller recharges between events to balance energy cost against
shortfall penalties. It provides the stochastic event model, exact
expected stage costs, a dynamic-programming solver for the optimal
recharge band, trace ingestion, event-level simulation, and capacity
planning, plus a command-line front end.
"""

__version__ = "0.1.0"

from .battery import (BatteryParams, ac_power, charging_cost, end_of_interval_soc,
                      penalty_cost, post_event_soc)
from .costs import (CostModel, MarketParams, QuadratureError, expected_charging_cost,
                    expected_penalty, expected_penalty_at, one_stage_cost,
                    stage_cost_marginals, time_to_target)
from .distributions import (ExcursionSignModel, PfcEnergyDistribution,
                            ScalarDistribution, StochasticModel,
                            build_energy_distribution)
from .ingest import (EventSequence, FrequencyTrace, InsufficientEventsError,
                     TraceParseError, correlation_report, extract_intervals,
                     fit_empirical, load_trace)
from .planning import (CapitalCostModel, OptimalCapacity, PlanningResult,
                       PlanningRow, expected_cost_vs_capacity, optimal_capacity,
                       stationary_distribution)
from .simulate import (MonteCarloValue, Policy, SimulationReport, compare_policies,
                       discounted_return, generate_events, simulate_policy)
from .solver import (ConvergenceError, DirectSearchResult, ThresholdPolicy,
                     TransitionMatrix, ValueFunction, ValueIterationResult,
                     band_from_greedy, bellman_operator, build_transition_matrix,
                     continuation_marginal, policy_value, solve_thresholds_by_roots,
                     solve_thresholds_direct, value_iteration)

__all__ = [
    "BatteryParams", "CapitalCostModel", "ConvergenceError", "CostModel",
    "DirectSearchResult", "EventSequence", "ExcursionSignModel", "FrequencyTrace",
    "InsufficientEventsError", "MarketParams", "MonteCarloValue", "OptimalCapacity",
    "PfcEnergyDistribution", "PlanningResult", "PlanningRow", "Policy",
    "QuadratureError", "ScalarDistribution", "SimulationReport", "StochasticModel",
    "ThresholdPolicy", "TraceParseError", "TransitionMatrix", "ValueFunction",
    "ValueIterationResult", "ac_power", "band_from_greedy", "bellman_operator",
    "build_energy_distribution", "build_transition_matrix", "charging_cost",
    "compare_policies", "continuation_marginal", "correlation_report",
    "discounted_return", "end_of_interval_soc", "expected_charging_cost",
    "expected_cost_vs_capacity", "expected_penalty", "expected_penalty_at",
    "extract_intervals", "fit_empirical", "generate_events", "load_trace",
    "one_stage_cost", "optimal_capacity", "penalty_cost", "policy_value",
    "post_event_soc", "simulate_policy", "solve_thresholds_by_roots",
    "solve_thresholds_direct",
    "stage_cost_marginals", "stationary_distribution", "time_to_target",
    "value_iteration",
]
