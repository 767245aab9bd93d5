"""Time-of-flight bin arithmetic shared by the simulator and the reconstructor.

Both sides must bin distances identically (round half away from zero, as in
the accumulation rule t = round(2*D/c)), so the mapping lives here and is
imported everywhere a distance becomes a bin index.
"""

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


def round_half_up(x):
    """Round half away from zero (x is non-negative everywhere we bin)."""
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def distance_to_bin(distance_m, bin_width_ps):
    """Round-trip time bin for a one-way distance in meters."""
    t_ps = 2.0 * np.asarray(distance_m) / SPEED_OF_LIGHT * 1e12
    return round_half_up(t_ps / bin_width_ps)


def bin_to_distance(bin_index, bin_width_ps):
    """One-way distance in meters at the (possibly fractional) bin index."""
    return np.asarray(bin_index, dtype=float) * bin_width_ps * 1e-12 * SPEED_OF_LIGHT / 2.0
