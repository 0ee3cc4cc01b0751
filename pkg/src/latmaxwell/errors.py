"""Exception types shared by the package."""


class LatMaxwellError(Exception):
    """Base class for all package errors."""


class InvalidParams(LatMaxwellError, ValueError):
    """Material constants fail validation (nonpositive or tiny entries)."""


class DegenerateBand(LatMaxwellError):
    """The two nonzero bands coincide (K0 below tolerance) where a simple band is needed."""


class ZeroBand(LatMaxwellError):
    """A band gradient was requested at z = 0, where every eigenvalue vanishes."""


class ZeroFiber(LatMaxwellError):
    """A projector onto the nonzero bands was requested at z = 0."""


class NotInSpectrum(LatMaxwellError):
    """The energy is not an eigenvalue of the fiber matrix."""


class InfeasibleNu(LatMaxwellError):
    """The requested critical height cannot be realized for the given beta."""


class UnsupportedCase(LatMaxwellError):
    """Operation not defined for this threshold case tag."""


class CalibrationFailed(LatMaxwellError):
    """Cutoff radii could not be shrunk enough to satisfy the checks."""


class EmptySupport(LatMaxwellError):
    """The energy window misses the spectrum on the sampled grid."""


class NotConverged(LatMaxwellError):
    """A quadrature did not reach the requested accuracy."""


class NormalizationError(LatMaxwellError):
    """No axis permutation / swap brings beta to the normal form."""
