"""Fault detection and isolation for diffusively coupled networks of passive agents."""
from . import assertion, dynamics, fdi, graph_core, indication, scenario, simulator, steady_state
from .errors import NetFDIError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["assertion", "dynamics", "fdi", "graph_core", "indication", "scenario", "simulator",
           "steady_state", "NetFDIError", "BACKEND", "__version__"]
