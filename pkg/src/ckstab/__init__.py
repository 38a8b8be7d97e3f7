"""Steady states and stability of optomechanical systems with cross-Kerr coupling."""

__version__ = "0.1.0"

from .model import Convention, DriveSpec, SteadyState, Susceptibility, SystemParams, steady_states, steady_states_batch
from .linstab import Klass, LinearizationMode, classify

__all__ = [
    "Convention",
    "DriveSpec",
    "Klass",
    "LinearizationMode",
    "SteadyState",
    "Susceptibility",
    "SystemParams",
    "classify",
    "steady_states",
    "steady_states_batch",
]
