"""Reference model setups used by the CLI, the benchmarks and the tests.

``morse_*`` build the OH-stretch Morse oscillator (atomic units);
``double_well_*`` build a 21-state asymmetric quartic double well in
reduced units (6 levels localized left, 5 right, 10 delocalized above the
barrier).
"""

from __future__ import annotations

import numpy as np

from . import constants as c
from .model import (GridSpec, Mecke, Morse, Projector, Taylor, build_energy_basis,
                    solve_bound_states)
from .system import RateModel, build_lvne, build_tdse

MORSE = Morse(0.1994, 1.821, 1.189)
MORSE_GRID = GridSpec(256, 0.7, 10.0, 0.9481 * c.AMU)
MORSE_DIPOLE = Mecke(0.6 * c.ANGSTROM, 7.85 * c.DEBYE / c.ANGSTROM)

# V(x) = V0 (x^2 - 1)^2 + delta x
DW_BARRIER = 6.0
DW_TILT = 1.0
DW_GRID = GridSpec(200, -2.6, 2.6, 30.0)
DW_LEFT = (0, 1, 3, 5, 7, 9)
DW_RIGHT = (2, 4, 6, 8, 10)
DW_DELOCALIZED = tuple(range(11, 21))


def morse_basis(observables=None, v_max: int | None = None):
    if observables is None:
        observables = [Projector((i,)) for i in range(22)]
    return build_energy_basis(MORSE_GRID, MORSE, [MORSE_DIPOLE], Taylor((1.0,)), observables, 0, v_max)


def morse_tdse(observables=None):
    return build_tdse(morse_basis(observables))


def morse_lvne(rate=2.0 / c.PS, temperature=0.0, observables=None, ordering="df"):
    return build_lvne(morse_basis(observables), RateModel("fermi", rate, temperature, 0, 1),
                      ordering=ordering)


def double_well_potential(barrier=DW_BARRIER, tilt=DW_TILT) -> Taylor:
    return Taylor((tilt, -4 * barrier, 0.0, 24 * barrier), 0.0, barrier)


def double_well_basis():
    """Observables: population of the left well, the right well, above the barrier."""
    obs = [Projector(DW_LEFT, "left"), Projector(DW_RIGHT, "right"),
           Projector(DW_DELOCALIZED, "delocalized")]
    return build_energy_basis(DW_GRID, double_well_potential(), [Taylor((1.0,))], Taylor((1.0,)),
                              obs, 0, 20)


def double_well_lvne(rate=0.1, temperature=4.0):
    """441-dimensional LvNE; the reference rate couples the two lowest left-well states."""
    return build_lvne(double_well_basis(), RateModel("fermi", rate, temperature, 0, 1))


def double_well_levels(barrier=DW_BARRIER, tilt=DW_TILT, grid=DW_GRID, n_states=21):
    """Classify eigenstates as left-well, right-well or above the barrier top."""
    E, U = solve_bound_states(grid, double_well_potential(barrier, tilt), 0, n_states - 1)
    x = grid.x
    # local maximum of the potential between the wells
    V = double_well_potential(barrier, tilt)(x)
    mid = (x > -0.5) & (x < 0.5)
    top = V[mid].max()
    left, right, deloc = [], [], []
    for i in range(len(E)):
        p = np.abs(U[:, i]) ** 2
        if E[i] > top:
            deloc.append(i)
        elif p[x < 0].sum() > 0.5 * p.sum():
            left.append(i)
        else:
            right.append(i)
    return left, right, deloc
