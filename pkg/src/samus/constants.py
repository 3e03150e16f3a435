"""Physical constants shared across the package.

Units throughout the package: km, km/s, rad, s.
"""

import math

MU_EARTH = 398600.4418  # gravitational parameter [km^3/s^2]
R_EARTH = 6378.137      # equatorial radius [km]
J2_EARTH = 1.08263e-3   # second zonal harmonic [-]

ARCSEC = math.pi / (180.0 * 3600.0)  # one arcsecond [rad]
DEG = math.pi / 180.0

# Sensor field of view, full angles (elevation axis x, azimuth axis y).
FOV_ELEVATION = 12.0 * DEG
FOV_AZIMUTH = 10.0 * DEG
