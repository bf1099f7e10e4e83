"""coopsim: multi-lane miniature traffic simulation.

Library layers, bottom up: track geometry, bicycle kinematics, the
lateral tracking law, IDM/MOBIL driver models and their cooperative
variants, intent coordination, sensing emulation, and the scenario
engine. A CLI (`coopsim`) and a realtime websocket gateway sit on top.
"""

from .config import ScenarioConfig, load_config
from .coordination import CoopParams, VirtualVehicle
from .dynamics import VehicleLimits, VehicleState
from .engine import RunRecord, World, compute_throughput, run_scenario
from .lateral import MobilParams
from .longitudinal import IDM_AGGRESSIVE, IDM_NORMAL, IdmParams
from .track import Track, TrackSpec, build_track
from .tracking import TrackerParams

__all__ = [
    "ScenarioConfig", "load_config", "CoopParams", "VirtualVehicle",
    "VehicleLimits", "VehicleState", "RunRecord", "World",
    "compute_throughput", "run_scenario", "MobilParams",
    "IDM_AGGRESSIVE", "IDM_NORMAL", "IdmParams", "Track", "TrackSpec",
    "build_track", "TrackerParams",
]

__version__ = "0.1.0"
