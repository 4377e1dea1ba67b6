"""Physical constants in the lab unit system used throughout the package.

Lengths are in micrometres, times in microseconds and masses in atomic mass
units.  Angular frequencies are therefore in rad/us.
"""

import math

from scipy import constants as _sc

AMU_KG = _sc.physical_constants["atomic mass constant"][0]
UM = 1e-6
US = 1e-6

#: Coulomb constant q^2 / (4 pi eps0) in amu um^3 / us^2.
COULOMB_CONSTANT = _sc.e**2 / (4 * math.pi * _sc.epsilon_0) / (AMU_KG * UM**3 / US**2)

#: Reduced Planck constant in amu um^2 / us.
HBAR = _sc.hbar / (AMU_KG * UM**2 / US)

ELECTRON_MASS_AMU = _sc.m_e / AMU_KG

#: Ion masses (atomic mass minus one electron), amu.
MASS_BE9 = 9.0121831 - ELECTRON_MASS_AMU
MASS_MG25 = 24.9858370 - ELECTRON_MASS_AMU

TWO_PI = 2 * math.pi
