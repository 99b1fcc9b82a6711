"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class FluxLabError(Exception):
    exit_code = 1


class DomainError(FluxLabError, ValueError):
    """Input outside the domain of an operation."""

    exit_code = 2


class ConfigError(DomainError):
    exit_code = 2


class NumericError(FluxLabError, ArithmeticError):
    """A numerical accuracy or convergence requirement was not met."""

    exit_code = 3


class AccuracyError(NumericError):
    pass


class DegeneracyError(NumericError):
    """A spectral gap required by the operation is closed or too small."""

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = theta


class CapabilityError(NumericError):
    """The data passed lacks something the operation needs (e.g. a full spectrum)."""


class ResourceError(FluxLabError, MemoryError):
    exit_code = 4
