"""Typed exceptions shared across the package."""


class StsimError(Exception):
    """Base class for all package-specific errors."""


class ParamError(StsimError, ValueError):
    """A parameter set violates a structural constraint."""


class RangeError(StsimError, OverflowError):
    """A scale-table value would overflow double precision."""


class HorizonError(StsimError):
    """A referenced time lies outside the simulated grid."""


class GeometryError(StsimError):
    """A referenced region lies outside the simulated box."""


class WindowError(StsimError):
    """An enumeration window is too large for exhaustive iteration."""


class RejectionError(StsimError):
    """Rejection sampling hit its retry cap.

    Carries the observed acceptance rate so callers can report it.
    """

    def __init__(self, message, acceptance_rate=None):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class ConfigError(StsimError, ValueError):
    """An experiment config failed validation.

    ``problems`` is a list of (field_path, message) pairs, machine readable
    for the CLI's exit-code-2 path.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(f"invalid configuration: {lines}")
