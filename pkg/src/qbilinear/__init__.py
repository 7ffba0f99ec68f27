"""Bilinear control systems for quantum dynamics.

Builds closed (TDSE) and open (Lindblad) bilinear systems from a
one-dimensional model, propagates them under external fields, optimizes
fields with monotonically convergent control iterations and reduces the
systems by balanced truncation or H2-optimal (BIRKA) projection.
"""

__version__ = "0.1.0"

from .errors import QBilinearError, ValidationError  # noqa: E402
from .model import GridSpec, Morse, Taylor, build_energy_basis, solve_bound_states  # noqa: E402
from .system import BilinearSystem, RateModel, build_lvne, build_tdse, initial_state  # noqa: E402
from .propagation import ControlField, Sin2Pulse, TimeGrid, propagate_adaptive, propagate_fixed  # noqa: E402
from .control import OctConfig, iterate  # noqa: E402

__all__ = [
    "BilinearSystem", "ControlField", "GridSpec", "Morse", "OctConfig", "QBilinearError",
    "RateModel", "Sin2Pulse", "Taylor", "TimeGrid", "ValidationError", "build_energy_basis",
    "build_lvne", "build_tdse", "initial_state", "iterate", "propagate_adaptive",
    "propagate_fixed", "solve_bound_states",
]
