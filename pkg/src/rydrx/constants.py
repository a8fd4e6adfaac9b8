"""Physical constants used throughout the package.

All values live in :data:`CONSTANTS` so tests can pin them exactly.
"""
import math

#: Planck constant (J s), five significant figures as used for the
#: field/Rabi-frequency relation.
PLANCK = 6.62606e-34
HBAR = PLANCK / (2 * math.pi)
#: Atomic unit of electric dipole moment e*a0 (C m), CODATA 2018.
E_A0 = 8.4783536255e-30
BOLTZMANN = 1.380649e-23
SPEED_OF_LIGHT = 299792458.0
ATOMIC_MASS_UNIT = 1.66053906660e-27
TWO_PI = 2 * math.pi

CONSTANTS = {
    "planck_J_s": PLANCK,
    "hbar_J_s": HBAR,
    "e_a0_C_m": E_A0,
    "boltzmann_J_per_K": BOLTZMANN,
    "speed_of_light_m_per_s": SPEED_OF_LIGHT,
    "atomic_mass_unit_kg": ATOMIC_MASS_UNIT,
}
