"""Exception types shared across the package."""


class RelstateError(Exception):
    """Base class for package errors."""


class EmptyInterval(RelstateError):
    """No IMU samples cover the requested integration window."""


class NonMonotonicTime(RelstateError):
    """Sample timestamps are not strictly increasing."""


class MissingImu(RelstateError):
    """Gap in an IMU stream larger than two nominal sample periods."""


class NonPsdResult(RelstateError):
    """A propagated covariance came out indefinite; indicates a bug upstream."""


class BehindCamera(RelstateError):
    """Point projects behind the image plane (z below the near limit)."""


class DegenerateConfiguration(RelstateError):
    """Not enough (or too ill-conditioned) correspondences for pose recovery."""


class SingularSystem(RelstateError):
    """Normal equations could not be factorized; a prior/gauge is missing."""


class SingularBlock(RelstateError):
    """Block to be marginalized is not invertible."""


class LengthMismatch(RelstateError):
    """Paired series have different lengths."""
