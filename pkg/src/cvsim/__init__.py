"""cvsim: deterministic discrete-event simulator of a connected-vehicle corridor testbed."""

from .core import Bsm, GeoPoint, SimConstants, distance, min_safety_distance
from .config import ScenarioConfig, load_scenario, parse_scenario
from .sim import RunResult, Simulation, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Bsm",
    "GeoPoint",
    "SimConstants",
    "distance",
    "min_safety_distance",
    "ScenarioConfig",
    "load_scenario",
    "parse_scenario",
    "RunResult",
    "Simulation",
    "run_scenario",
    "__version__",
]
