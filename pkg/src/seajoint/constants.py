"""Physical constants shared by every module.

Stated once so depth, pressure, buoyancy, and buckling calculations all
agree bit-for-bit.
"""

GRAVITY = 9.80665
"""Standard gravity, m/s^2."""

ATMOSPHERIC_PRESSURE_PA = 101_325.0
"""One standard atmosphere, Pa."""

SEAWATER_DENSITY = 1025.0
"""Default fluid density, kg/m^3.  Override for freshwater tests."""

PASCALS_PER_BAR = 100_000.0
