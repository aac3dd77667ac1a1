"""Exception hierarchy.

Every error carries the ``module.operation`` it originated from so that the
CLI can report it verbatim and map it to an exit status.
"""

from __future__ import annotations


class JumpBSDEError(Exception):
    """Base class; ``origin`` is ``"<module>.<operation>"``."""

    exit_status = 1

    def __init__(self, origin: str, message: str):
        self.origin = origin
        self.message = message
        super().__init__(f"{origin}: {message}")


class ConfigError(JumpBSDEError, ValueError):
    exit_status = 2


class DomainError(JumpBSDEError, ValueError):
    exit_status = 3


class NumericalError(JumpBSDEError, ArithmeticError):
    exit_status = 3


class AdmissibilityError(NumericalError):
    """Raised when a grid is too coarse for the implicit backward step."""
