"""QoS-aware load-balancing lab: adaptive proxy policies under a deterministic simulator."""

__version__ = "0.1.0"

from .core import QosRequirements, RequestRecord, Topology
from .engine import SimulationTrace, run_scenario
from .metrics import MetricsReport, compute_report
from .scenarios import ScenarioSpec, StrategySpec

__all__ = [
    "__version__",
    "QosRequirements",
    "RequestRecord",
    "Topology",
    "SimulationTrace",
    "run_scenario",
    "MetricsReport",
    "compute_report",
    "ScenarioSpec",
    "StrategySpec",
]
