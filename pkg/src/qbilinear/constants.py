"""Conversion factors between atomic units and laboratory units.

Every quantity inside the package is in atomic units (hbar = m_e = e = 1,
k_B = 1).  Divide a laboratory value by the matching factor below to get
atomic units, e.g. ``2.0 / PS`` is a rate of 2 ps^-1 in inverse a.u. time.
"""

#: unified atomic mass unit in electron masses
AMU = 1822.888486
#: one picosecond / femtosecond in a.u. of time
PS = 41341.37
FS = PS / 1000.0
#: one Angstrom in bohr
ANGSTROM = 1.0 / 0.52917721
#: one Debye in a.u. of dipole moment
DEBYE = 1.0 / 2.541746
#: one wavenumber (cm^-1) in hartree
CM_1 = 1.0 / 219474.6313
#: one MV/cm in a.u. of electric field
MV_CM = 1.0 / 5142.20652
#: one Kelvin in hartree
KELVIN = 1.0 / 315775.02
