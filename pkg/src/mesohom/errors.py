"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MesohomError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(MesohomError, ValueError):
    """An input parameter is outside its admissible range."""


class SaturationError(MesohomError):
    """Particle placement gave up before all diameters were placed."""

    def __init__(self, message: str, achieved_fill: float, placed: int):
        super().__init__(f"{message} (achieved fill {achieved_fill:.4f}, placed {placed})")
        self.achieved_fill = achieved_fill
        self.placed = placed


class GeometryError(MesohomError):
    """Tessellation or triangulation could not be built."""


class ConstraintError(MesohomError):
    """Inconsistent or cyclic constraint definitions."""


class RankDeficiencyError(MesohomError):
    """The system matrix is singular; ``null_vectors`` holds a basis when known."""

    def __init__(self, message: str, null_vectors=None):
        super().__init__(message)
        self.null_vectors = null_vectors


class SolveError(MesohomError):
    """The direct solve finished but missed the residual requirement."""


class ContractError(MesohomError):
    """A function precondition on its inputs is violated."""


class ConfigError(MesohomError):
    """Scenario configuration is malformed."""
