"""nmwalk: planar neuromuscular walking simulation, optimization and analysis."""

from .body import Anthropometry, BipedModel, ContactForce, ModelState, build_model
from .config import ConfigError, RunConfig, load_config
from .contact import ContactParams, Terrain, ground_contact
from .control import ControlParams, ParamSpace, PhaseDetector, ReflexController
from .muscles import MuscleGroup, MuscleParams, MuscleState
from .simulate import GaitTrace, WalkerSim, detect_events, fall_check, steady_stride
from .analysis import analyze_trace, classify_ip, collision_angle, collision_fraction
from .cmaes import CMAES
from .optimize import GaitRecord, optimize, robustness_sweep, staged_cost

__version__ = "0.1.0"

__all__ = [
    "Anthropometry", "BipedModel", "ContactForce", "ModelState", "build_model",
    "ConfigError", "RunConfig", "load_config",
    "ContactParams", "Terrain", "ground_contact",
    "ControlParams", "ParamSpace", "PhaseDetector", "ReflexController",
    "MuscleGroup", "MuscleParams", "MuscleState",
    "GaitTrace", "WalkerSim", "detect_events", "fall_check", "steady_stride",
    "analyze_trace", "classify_ip", "collision_angle", "collision_fraction",
    "CMAES", "GaitRecord", "optimize", "robustness_sweep", "staged_cost",
    "__version__",
]
