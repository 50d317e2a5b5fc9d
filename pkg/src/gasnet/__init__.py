"""Lumped-element gas pipeline network simulation, linearization and control."""

from .control import (
    ControlGrid,
    ControlSettings,
    OptimizationResult,
    audit,
    linearized_stage_cost,
    mpc_step,
    run_mpc,
    run_oc,
    stage_cost,
)
from .error_bounds import (
    certify,
    empirical_gap,
    time_varying_bound,
    uniform_bound,
)
from .incidence import Topology, assemble, volume_matrix
from .linearize import LinearModel, NominalPoint, build_model, relinearize
from .network import (
    Compressor,
    Network,
    Node,
    Parameters,
    Pipe,
    Profile,
    RefinedNetwork,
    Scenario,
    parse_network,
    parse_scenario,
    refine,
    validate,
)
from .simulate import LinearDynamics, NetworkDynamics, Policy, simulate
from .spectral import (
    PipeFrequencyParams,
    center_of_gravity,
    frequency_response,
    pipe_poles,
    transfer_matrix,
)
from .state import State, Trajectory

__all__ = [
    "Compressor", "ControlGrid", "ControlSettings", "LinearDynamics", "LinearModel",
    "Network", "NetworkDynamics", "Node", "NominalPoint", "OptimizationResult",
    "Parameters", "Pipe", "PipeFrequencyParams", "Policy", "Profile", "RefinedNetwork",
    "Scenario", "State", "Topology", "Trajectory", "assemble", "audit", "build_model",
    "center_of_gravity", "certify", "empirical_gap", "frequency_response",
    "linearized_stage_cost", "mpc_step", "parse_network", "parse_scenario", "pipe_poles",
    "refine", "relinearize", "run_mpc", "run_oc", "simulate", "stage_cost",
    "time_varying_bound", "transfer_matrix", "uniform_bound", "validate", "volume_matrix",
]
