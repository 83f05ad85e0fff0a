"""Scenario handling and the closed-loop simulator with its trace output."""

from .convergence import ConvergenceStudy, convergence_study
from .scenario import Scenario, ScenarioError, bundled, load_scenario, parse_scenario, save_scenario
from .simulate import SimulationDiverged, Trace, generate_delays, run

__all__ = [
    "ConvergenceStudy",
    "Scenario",
    "ScenarioError",
    "SimulationDiverged",
    "Trace",
    "bundled",
    "convergence_study",
    "generate_delays",
    "load_scenario",
    "parse_scenario",
    "run",
    "save_scenario",
]
