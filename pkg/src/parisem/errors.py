"""Exception types shared across the package."""

from __future__ import annotations


class ParameterError(ValueError):
    """A parameter vector is outside the model's domain (e.g. variance <= 0)."""


class DegenerateStatisticError(ValueError):
    """An M-step input has a nonpositive moment where positivity is required."""


class DegeneracyError(RuntimeError):
    """Every particle weight collapsed to zero at some time step."""

    def __init__(self, message: str, t: int | None = None, theta=None):
        super().__init__(message)
        self.t = t
        self.theta = theta


class BackwardDegeneracyError(DegeneracyError):
    """All backward weights vanished for some target particle."""


class BoundViolationError(RuntimeError):
    """An observed transition density exceeded the supplied upper bound."""


class ScheduleError(ValueError):
    """A step-size value or exponent is outside the admissible range."""


class InstanceTooLargeError(ValueError):
    """The brute-force path-space oracle refused an instance above its cap."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``fields`` lists the offending field names.
    """

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = fields or []
