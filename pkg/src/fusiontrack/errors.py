"""Exception types raised across the package."""


class FusionTrackError(Exception):
    """Base class for package errors."""


class BehindCamera(FusionTrackError):
    """A box corner projects from at or behind the camera plane."""


class SingularInnovation(FusionTrackError):
    """Innovation covariance too ill-conditioned to invert."""


class InvalidBetas(FusionTrackError, ValueError):
    """Association weights are negative, mis-sized, or do not sum to one."""


class DimensionMismatch(FusionTrackError, ValueError):
    pass


class ClusterTooLarge(FusionTrackError):
    """Exact JPDA enumeration refused: too many joint events."""


class FewerThanM(FusionTrackError):
    """Fewer feasible assignments exist than were requested.

    ``solutions`` holds every feasible assignment found.
    """

    def __init__(self, message, solutions):
        super().__init__(message)
        self.solutions = solutions


class NonMonotonicTimestamp(FusionTrackError, ValueError):
    pass


class FrameMismatch(FusionTrackError, ValueError):
    pass


class InvalidConfig(FusionTrackError, ValueError):
    pass


class ParseError(FusionTrackError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: " if path is not None else f"line {line}: "
        super().__init__(f"{where}{message}" if where else message)
        self.line = line
        self.path = path


class MissingField(ParseError):
    pass


class InconsistentFrameOrder(ParseError):
    pass
