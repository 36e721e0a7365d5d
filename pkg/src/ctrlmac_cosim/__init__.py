"""Co-simulation of event-triggered control over LPWA MAC protocols."""

from .cosim import SimLog, run_scenario
from .metrics import MetricsReport, compute_metrics, emit_csv
from .scenario import ScenarioError, ScenarioSpec, parse_scenario
from .studies import run_study

__all__ = [
    "MetricsReport",
    "ScenarioError",
    "ScenarioSpec",
    "SimLog",
    "compute_metrics",
    "emit_csv",
    "parse_scenario",
    "run_scenario",
    "run_study",
]
