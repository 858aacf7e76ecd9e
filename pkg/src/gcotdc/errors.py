"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its contract."""


class ProfileError(ValueError):
    """A synthesized or loaded bin profile is unusable (nonpositive width, bad tiling)."""


class InvalidSampleError(ValueError):
    """A sampling-matrix word set cannot be decoded (bad gray word, non-adjacent states)."""


class CalibrationError(RuntimeError):
    """Base class for calibration failures."""


class DeadAddressError(CalibrationError):
    """A virtual bin referenced by the compensation table received zero occurrences."""


class SaturationError(CalibrationError):
    """A fixed-point accumulator would exceed its integer range."""


class CoverageWarning(UserWarning):
    """A raw bin spans more than four virtual bins; missing-bin-free status is withdrawn."""
