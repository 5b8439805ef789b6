"""Event-triggered output synchronization toolkit.

Two cooperating layers over a directed communication graph: a linear
reference-model consensus network with broadcast triggering and a
Riccati-designed gain, and per-agent nonlinear output regulation with
internal-model compensators and a small-gain trigger.  Plus a
deterministic hybrid simulator and a config-driven CLI.
"""
from .consensus import (ConsensusAgent, ConsensusDesign, ReferenceModelSpec,
                        consensus_control, design_consensus, lyapunov_V,
                        relative_measurement)
from .graph import DirectedGraph, GraphSpectra, laplacian, left_eigenvector
from .regulation import (AgentModel, RegulationPlant, RegulatorSolution,
                         SteadyStateGenerator, build_generator,
                         make_linear_sigma, tracking_error)
from .sim import EventLog, RunResult, Scenario, SimTrace, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AgentModel", "ConsensusAgent", "ConsensusDesign", "DirectedGraph",
    "EventLog", "GraphSpectra", "ReferenceModelSpec", "RegulationPlant",
    "RegulatorSolution", "RunResult", "Scenario", "SimTrace",
    "SteadyStateGenerator", "build_generator", "consensus_control",
    "design_consensus", "laplacian", "left_eigenvector", "lyapunov_V",
    "make_linear_sigma", "relative_measurement", "run_scenario",
    "tracking_error",
]
