"""Exception types shared across the package."""


class FvsdeError(Exception):
    """Base class for all package errors."""


class MeshError(FvsdeError):
    """Invalid mesh geometry (non-positive spacing, non-nested refinement, ...)."""


class CouplingError(FvsdeError):
    """Time grids or noise paths that cannot be coupled (non-divisor step counts)."""


class ConfigError(FvsdeError):
    """Malformed or inconsistent study configuration."""


class SolverError(FvsdeError):
    """A linear or eigenvalue solve failed to reach its tolerance."""


class StepFailure(SolverError):
    """Newton did not converge within the iteration budget at one time step."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class StabilityWarning(UserWarning):
    """tau * L_beta exceeds the solvability margin of the implicit reaction term."""


class CompatibilityWarning(UserWarning):
    """Projection data violates the discrete Neumann compatibility condition."""
