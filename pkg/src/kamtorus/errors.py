"""Exception hierarchy for the KAM iteration engine.

Every failure mode that a caller may want to branch on gets its own class;
all of them derive from :class:`KamError`.  Errors raised mid-run carry the
relevant numeric ledger in ``details`` so reports stay complete.
"""

from __future__ import annotations


class KamError(Exception):
    """Base class for all engine errors."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = dict(details) if details else {}


class DomainError(KamError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DivergenceError(KamError):
    """A tail integral does not converge (integrand fails to decay)."""


class HypothesisError(KamError):
    """A smallness or step hypothesis fails; details carry named margins."""


class CertificationError(KamError):
    """Diophantine certification does not cover a requested mode."""


class DivisorError(KamError):
    """A small divisor falls below its certified lower bound."""


class ContractionError(KamError):
    """A contraction certificate fails (step budget or fixed-point loop)."""


class InvalidConstantsError(KamError, ValueError):
    """Step constants (a, b) do not give a contraction factor q < 1."""


class WidthExhaustedError(HypothesisError):
    """Total width loss eats the analyticity strip: initial cutoff too small."""


class IntegrationError(KamError):
    """The adaptive ODE integrator failed to reach the requested time."""


class ConfigError(KamError, ValueError):
    """Invalid or inconsistent run configuration."""
