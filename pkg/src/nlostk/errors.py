"""Exception hierarchy shared across the toolkit.

The CLI maps these classes onto distinct exit codes, so raise the most
specific subclass that applies.
"""


class NlosError(Exception):
    """Base class for all toolkit errors."""


class DomainError(NlosError, ValueError):
    """An input is outside the mathematical domain of an operation."""


class FormatError(NlosError):
    """A file or string could not be parsed into the expected structure."""


class InvalidPlaneError(DomainError):
    """Plane coefficients cannot describe a usable relay plane."""


class DegenerateFitError(NlosError):
    """The data does not constrain the model (rank deficiency, collinearity)."""


class VoltageRangeError(NlosError):
    """Requested scan point needs voltages outside the admissible range.

    Carries the offending and range-clamped voltage pairs.
    """

    def __init__(self, voltages, clamped, v_range):
        self.voltages = voltages
        self.clamped = clamped
        self.v_range = v_range
        super().__init__(
            f"voltages {tuple(float(v) for v in voltages)} outside +-{v_range} V "
            f"(clamped: {tuple(float(v) for v in clamped)})"
        )


class HistogramOverflowError(NlosError):
    """A scene element maps to a time bin beyond the histogram."""


class AmbiguousPeakError(NlosError):
    """No dominant direct-return peak could be located in a histogram."""


class NormalizationError(NlosError):
    """Per-point normalization is impossible (e.g. an all-zero gamma map)."""


class LowSignalError(NlosError):
    """Not enough counts to attempt the requested fit."""


class CoverageError(NlosError):
    """Volume and histogram time span do not cover each other."""


class EmptyBoxError(DomainError):
    """Computed bounding box has no depth extent (z_max <= z_min)."""


class StepFailureError(NlosError):
    """Line search could not find a decreasing step at the first iterate."""
