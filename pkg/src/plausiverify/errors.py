"""Exception types shared across the package."""


class PlausiverifyError(Exception):
    """Base class for package-specific failures."""


class ConfigError(PlausiverifyError, ValueError):
    """Invalid configuration value or mismatched inputs."""


class DegenerateInputError(PlausiverifyError, ValueError):
    """Numerically degenerate input, e.g. a zero-norm quaternion."""


class BehindCameraError(PlausiverifyError, ValueError):
    """Point has non-positive depth in the camera frame."""


class NoGroundFoundError(PlausiverifyError, RuntimeError):
    """Ground-plane estimation failed to reach the inlier quorum."""


class PreconditionError(PlausiverifyError, ValueError):
    """Operation called with inputs that violate its contract."""


class EvaluationError(PlausiverifyError, RuntimeError):
    """Objective evaluation returned a non-finite value.

    `coordinate` is the index of the state entry being probed when the
    failure occurred, or None when not attributable.
    """

    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate
