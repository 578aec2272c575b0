"""Exception hierarchy shared by every pagm module."""


class PagmError(Exception):
    """Base class for all errors raised by pagm."""


class GraphError(PagmError, ValueError):
    pass


class AsymmetricAdjacency(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class FeatureShapeMismatch(GraphError):
    pass


class ShapeMismatch(PagmError, ValueError):
    pass


class WidthMismatch(ShapeMismatch):
    pass


class IndexMismatch(ShapeMismatch):
    pass


class StaleIntermediates(ShapeMismatch):
    pass


class InvalidDepth(PagmError, ValueError):
    pass


class InvalidGroundTruth(PagmError, ValueError):
    """Ground truth is not a 0/1 one-to-one assignment."""


class NonFinite(PagmError, ValueError):
    pass


class KinkProximity(PagmError):
    """A ReLU pre-activation sits too close to zero for finite differencing."""


class TooLarge(PagmError, ValueError):
    pass


class ConnectivityRetryExceeded(PagmError):
    pass


class EmptyDataset(PagmError, ValueError):
    pass


class IoError(PagmError, OSError):
    pass


class FormatError(PagmError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionMismatch(PagmError, ValueError):
    pass
