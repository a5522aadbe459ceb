"""Grid-based discrete element simulation with simple and practical contact laws."""

from .contact import ContactHistory, TangentialHistory
from .integrator import Simulation, SimulationExplosion, StepOutcome, step, termination_check
from .state import MaterialTable, ParticleSet, SimConfig, Wall, swap_buffers

__version__ = "0.1.0"

__all__ = [
    "ContactHistory",
    "MaterialTable",
    "ParticleSet",
    "SimConfig",
    "Simulation",
    "SimulationExplosion",
    "StepOutcome",
    "TangentialHistory",
    "Wall",
    "step",
    "swap_buffers",
    "termination_check",
]
