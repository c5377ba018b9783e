"""Exception types raised by the library."""


class DdgError(ValueError):
    """Base class for all library-specific errors."""


class ModeMismatchError(DdgError):
    """An operation was applied to a state space of the wrong noising mode."""


class SpaceMismatchError(DdgError):
    """Two distributions or matrices live on different state spaces."""


class DegenerateInputError(DdgError):
    """A closed-form shortcut was called outside its domain of validity."""


class ZeroProbabilityError(DdgError):
    """A conditional was requested on an event of probability zero."""


class DegenerateTiltError(DdgError):
    """The tilt normalizer underflowed; the interpolated table is all zero."""


class DegenerateColumnError(DdgError):
    """A generator column has no usable jump rates left after interpolation."""


class ScheduleDomainError(DdgError):
    """A time argument lies outside the noise schedule's domain."""


class QuadratureError(DdgError):
    """Adaptive quadrature failed to converge within its evaluation budget."""
