"""
Finite-lattice PEPS imaginary time evolution with single-layer environments.

Subpackages are imported explicitly, e.g. ``from slpeps.evolution import
run_evolution``; the most used entry points are re-exported here.
"""

from .evolution import Phase, TrotterSchedule, run_evolution
from .models import Heisenberg
from .observables import amplitude, expect_energy_dl, metropolis_energy
from .peps import PepsState, init_neel, init_random, load_checkpoint, save_checkpoint

__all__ = [
    "Heisenberg",
    "PepsState",
    "Phase",
    "TrotterSchedule",
    "amplitude",
    "expect_energy_dl",
    "init_neel",
    "init_random",
    "load_checkpoint",
    "metropolis_energy",
    "run_evolution",
    "save_checkpoint",
]
