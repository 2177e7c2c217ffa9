"""Ambulance dispatch simulation toolkit.

City geometry and travel times, arrival and service sampling, per-station
fleet Markov chains with a precomputed cost-rate table, exact assignment
solvers, a catalog of dispatch policies, and a discrete-event simulator
that compares them under common random numbers.
"""

from .arrivals import ArrivalRateTable, EmergencyCall, sample_scenario
from .assignment import (
    BudgetExceeded,
    DispatchDecision,
    DispatchProblem,
    ModelingError,
    solve_linear,
    solve_nonlinear,
)
from .citymodel import (
    BBox,
    CityInstance,
    GeoPoint,
    Grid,
    TravelProvider,
    Zone,
    build_hex_grid,
    build_rect_grid,
)
from .ctmc import (
    PreparednessTable,
    StationModel,
    build_generator,
    build_preparedness_table,
    calibrate_station_models,
    enumerate_states,
    stationary_distribution,
    steady_state_cost,
)
from .instances import (
    InstanceConfig,
    build_instance,
    build_synthetic_instance,
    cost_model_for,
    default_config,
    load_instance_config,
)
from .linalg import SolverFailure
from .metrics import CostModel, EmergencyType, SummaryStats, summarize
from .policies import POLICIES, PolicyContext, PolicyDecision, PolicyParams, make_policy
from .reporting import build_report, read_result_file, write_result_file
from .simulator import (
    Simulation,
    SimulationFault,
    SimulationResult,
    ServiceParams,
    replay_dispatch_records,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalRateTable",
    "BBox",
    "BudgetExceeded",
    "CityInstance",
    "CostModel",
    "DispatchDecision",
    "DispatchProblem",
    "EmergencyCall",
    "EmergencyType",
    "GeoPoint",
    "Grid",
    "InstanceConfig",
    "ModelingError",
    "POLICIES",
    "PolicyContext",
    "PolicyDecision",
    "PolicyParams",
    "PreparednessTable",
    "ServiceParams",
    "Simulation",
    "SimulationFault",
    "SimulationResult",
    "SolverFailure",
    "StationModel",
    "SummaryStats",
    "TravelProvider",
    "Zone",
    "build_generator",
    "build_hex_grid",
    "build_instance",
    "build_preparedness_table",
    "build_rect_grid",
    "build_report",
    "build_synthetic_instance",
    "calibrate_station_models",
    "cost_model_for",
    "default_config",
    "enumerate_states",
    "load_instance_config",
    "make_policy",
    "read_result_file",
    "replay_dispatch_records",
    "run_scenario",
    "sample_scenario",
    "solve_linear",
    "solve_nonlinear",
    "stationary_distribution",
    "steady_state_cost",
    "summarize",
    "write_result_file",
]
