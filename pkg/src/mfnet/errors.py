"""Exception types shared across the package, with CLI exit codes."""


class MfnetError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(MfnetError):
    """Config file fails schema validation or contains bad values."""

    exit_code = 2


class CapExceededError(MfnetError):
    """An enumeration (state-action space or per-state candidates) exceeds its cap."""

    exit_code = 3


class VerificationError(MfnetError):
    """One or more verification criteria failed."""

    exit_code = 4


class ModelValidityError(MfnetError):
    """A model function violates its contract (kernel support/normalization, reward bound)."""

    exit_code = 5


class StationaryConvergenceError(MfnetError):
    """Power iteration for the stationary distribution did not converge within the cap."""

    exit_code = 6
