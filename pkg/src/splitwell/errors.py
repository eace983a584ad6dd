"""Exception hierarchy."""


class SplitwellError(Exception):
    """Base class for all package errors."""


class ConfigError(SplitwellError, ValueError):
    """Invalid or unreadable configuration."""


class SingularityError(SplitwellError, ValueError):
    """Field requested on (or too close to) a wire axis."""


class NumericalError(SplitwellError, RuntimeError):
    """A numerical procedure failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GridTooSmallError(NumericalError):
    """Wavefunctions do not decay before the hard-wall boundary."""


class ParityError(SplitwellError, ValueError):
    """A wavefunction has no well-defined parity."""


class GaugeError(NumericalError):
    """Eigenvector gauge is discontinuous along the s-grid."""


class SGridTooCoarseError(GaugeError):
    """Adjacent eigenstates overlap too little even after refinement."""


class AccuracyError(NumericalError):
    """Refinement cap reached without meeting the requested accuracy."""


class OptimizerError(NumericalError):
    """Shooting or shape integration failed."""


class GapClosedError(OptimizerError):
    """The level gap of the targeted pair is not positive everywhere."""


class PropagatorError(NumericalError):
    """Norm drift beyond tolerance during time propagation."""
