"""Physical constants and unit conversions.

Internal units: positions in µm, fields in G, currents in mA, times in s,
energies as angular frequencies (E/ħ, rad/s).
"""

import numpy as np
from scipy import constants as _c

HBAR = _c.hbar
H_PLANCK = _c.h
TWO_PI = 2.0 * np.pi

# mu_0 / 2pi expressed in G * µm / mA (~2.0)
WIRE_CONSTANT = _c.mu_0 / (2.0 * np.pi) * 1e4 * 1e6 / 1e3

RB87_MASS = 1.44316e-25  # kg

# h * 1.4 MHz per gauss for |F=2, mF=2>
POTENTIAL_SCALE_HZ_PER_G = 1.4e6


def kinetic_coefficient(mass: float) -> float:
    """Return ħ/2m in µm²/s, so that -ħ/2m ∂² carries units of rad/s."""
    return HBAR / (2.0 * mass) * 1e12
