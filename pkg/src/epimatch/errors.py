"""Exception types raised by epimatch."""


class EpimatchError(ValueError):
    """Base class for all geometric and matching errors."""


class DegenerateTranslation(EpimatchError):
    """The relative translation is (numerically) zero, so no epipolar geometry exists."""


class DegenerateLine(EpimatchError):
    """The epipolar line has a = b = 0, i.e. the query point sits on the left epipole."""


class EpipoleAtInfinity(EpimatchError):
    """The epipole is a point at infinity (parallel epipolar lines)."""


class InfiniteEpipole(EpipoleAtInfinity):
    """An angular construction was attempted around an epipole at infinity."""


class AmbiguousDirection(EpimatchError):
    """The reference point of an epipolar line coincides with the epipole."""


class NoCandidates(EpimatchError):
    """A descriptor search was asked to pick the best of an empty candidate set."""


class DimensionMismatch(EpimatchError):
    """Two descriptors (or descriptor sets) have different lengths."""


class InfeasibleCameraConfig(EpimatchError):
    """The pose sampler could not realise the requested epipole regime."""
