"""Exception types shared across the package."""


class SlidingOcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SlidingOcError):
    """Invalid or unsupported configuration value."""


class IndexConditionError(SlidingOcError):
    """The index-2 condition g_x f_z nonsingular is violated."""


class StepFailure(SlidingOcError):
    """Newton iteration for a stage system did not converge."""


class IntegrationError(SlidingOcError):
    """Trajectory integration failed (divergence or repeated step failures)."""


class TangentialCrossingError(SlidingOcError):
    """Jump formula denominator below the regularity threshold."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TerminalConditionError(SlidingOcError):
    """Terminal adjoint linear system is singular or inconsistent."""


class OracleInvalidError(SlidingOcError):
    """Finite-difference oracle invalidated by a transition-structure change."""


class MeshMismatchError(SlidingOcError):
    """Trajectory and adjoint records do not share the same mesh."""


class DataFormatError(SlidingOcError):
    """Malformed input file (control file or config file)."""


class ProblemLookupError(SlidingOcError):
    """Unknown problem name."""
