"""Exception hierarchy shared across the tracker."""


class EmptyMaskError(ValueError):
    """Raised when an operation requires a mask with at least one set bit."""


class NoConsensusError(ValueError):
    """Raised when a heatmap is all zero and no consensus region exists."""


class SceneError(ValueError):
    """Raised when a scene configuration cannot be realised."""


class AnnotationError(ValueError):
    """Raised on malformed or inconsistent annotation files."""


class EvalRangeError(ValueError):
    """Raised when prediction and ground truth do not cover the same frames."""


class BackendError(RuntimeError):
    """Base class for backend session failures."""


class BackendStartupError(BackendError):
    """The backend process or session could not be brought up."""


class TransportError(BackendError):
    """The connection to the backend broke mid-session."""


class ProtocolError(BackendError):
    """The backend sent a reply that violates the wire protocol."""


class BackendRequestError(BackendError):
    """The backend answered a request with an error message."""
