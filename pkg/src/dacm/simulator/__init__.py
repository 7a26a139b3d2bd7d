"""Discrete-time co-simulation world for exercising the engine."""

from .kinematics import apply_command, follow_route, polyline_length
from .metrics import Metrics, SeparationMonitor
from .pipeline import DacmPipeline, TickResult
from .scenario import Behavior, FlightSpec, Scenario, load_scenario, parse_scenario
from .trace import TraceLog, write_outputs
from .world import World, run_scenario

__all__ = [
    "Behavior",
    "DacmPipeline",
    "FlightSpec",
    "Metrics",
    "Scenario",
    "SeparationMonitor",
    "TickResult",
    "TraceLog",
    "World",
    "apply_command",
    "follow_route",
    "load_scenario",
    "parse_scenario",
    "polyline_length",
    "run_scenario",
    "write_outputs",
]
