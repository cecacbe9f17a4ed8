"""Adaptive potential-game cooperative driving for mixed CAV/HDV traffic.

A desk-scale simulator and solver library: individual utilities compose
into a system potential, per-vehicle impact weights come from marginal
contributions, human-driver preference estimates adapt online, and an
SQP-style optimizer searches the equilibrium action profile each control
step.
"""

from .config import ScenarioConfig, make_config, validate_config
from .engine import TrialLog, run_trial
from .scenario import Scenario, VehicleState, build_intersection

__all__ = [
    "ScenarioConfig",
    "make_config",
    "validate_config",
    "TrialLog",
    "run_trial",
    "Scenario",
    "VehicleState",
    "build_intersection",
]

__version__ = "0.1.0"
