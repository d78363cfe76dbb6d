"""Exception types shared across the package.

Every error raised by the library derives from :class:`PmuPlaceError` so
callers (and the CLI) can map failures to machine-readable kinds via
``type(exc).__name__``.
"""


class PmuPlaceError(Exception):
    """Base class for all package-specific errors."""


class MissingField(PmuPlaceError):
    """A required field is absent from a case or config document."""


class InvalidConfig(PmuPlaceError):
    """A config document contains an unknown or ill-typed entry."""


class DimensionMismatch(PmuPlaceError):
    """Array dimensions are inconsistent with the machine count."""


class NonPositiveConstant(PmuPlaceError):
    """A machine constant violates its positivity/ordering invariant."""


class NotAnEquilibrium(PmuPlaceError):
    """Terminal conditions do not define a steady state within tolerance."""


class SingularInitialization(PmuPlaceError):
    """Equilibrium initialization hit a degenerate phasor (zero magnitude)."""


class NonFiniteState(PmuPlaceError):
    """Integration produced a non-finite state coordinate."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SimulationDiverged(PmuPlaceError):
    """A perturbed gramian simulation blew up; identifies the perturbation."""

    def __init__(self, message, state_index=None, direction=None,
                 magnitude=None, step=None):
        super().__init__(message)
        self.state_index = state_index
        self.direction = direction
        self.magnitude = magnitude
        self.step = step


class SchemeDimensionMismatch(PmuPlaceError):
    """Perturbation scheme is not dimensioned for the case's dynamic state."""


class LengthMismatch(PmuPlaceError):
    """Sequence lengths disagree (placements, gramian parts, trajectories)."""


class NotSymmetric(PmuPlaceError):
    """A matrix expected to be symmetric is not, beyond tolerance."""


class CombinatoricsTooLarge(PmuPlaceError):
    """Exhaustive search would exceed the configured candidate cap."""


class FilterDiverged(PmuPlaceError):
    """SRUKF produced a non-finite state or an infeasible Cholesky downdate."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
