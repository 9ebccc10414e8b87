"""
Exception hierarchy for cmc_foliation.

Every error raised by the geometry, mesh and solver modules derives from
CmcError so the CLI can map it to exit code 1, and from the closest builtin
so library callers can catch it generically.
"""

from typing import List, Optional


class CmcError(Exception):
    """Base class for all cmc_foliation errors."""


class OutOfDomain(CmcError, ValueError):
    """A query point lies outside a chart or inside a finite-difference margin."""


class DegenerateDerivative(CmcError, ArithmeticError):
    """A holomorphic map has (numerically) vanishing derivative."""


class DomainMismatch(CmcError, ValueError):
    """The image of a map leaves the chart of the metric it is composed with."""


class NonImmersion(CmcError, ArithmeticError):
    """A surface fails to be immersed at a sample point."""


class MeshPairingFailure(CmcError, RuntimeError):
    """Boundary nodes of paired octagon sides do not match under the pairing."""


class SizeMismatch(CmcError, ValueError):
    """A field does not have one value per canonical mesh node."""


class NotPositive(CmcError, ValueError):
    """A coefficient field that must be strictly positive is not."""


class SolverFailure(CmcError, RuntimeError):
    """A sparse linear solve stagnated."""


class OutOfRange(CmcError, ValueError):
    """A mean-curvature parameter lies outside the admissible interval."""


class SingularLinearization(CmcError, ArithmeticError):
    """The linearized residual operator could not be inverted."""


class NewtonDiverged(CmcError, RuntimeError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, message: str, H: Optional[float] = None, history: Optional[List[float]] = None):
        super().__init__(message)
        self.H = H
        self.history = list(history or [])


class ContinuationStalled(CmcError, RuntimeError):
    """Continuation step size fell below the configured minimum."""

    def __init__(self, message: str, H: Optional[float] = None, history: Optional[List[float]] = None):
        super().__init__(message)
        self.H = H
        self.history = list(history or [])


class NonConstantH(CmcError, ValueError):
    """Principal-curvature data does not describe a constant mean curvature leaf."""


class NonEquivariantField(CmcError, ValueError):
    """A quadratic-differential field violates the pairing cocycle."""


class ConfigError(CmcError, ValueError):
    """A run configuration is missing, malformed or violates the schema."""


class MissingArtifacts(ConfigError):
    """A run directory lacks the files a command reads."""
