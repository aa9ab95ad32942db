"""Exception hierarchy shared across the package."""


class QPNetError(Exception):
    """Base class for all package errors."""


class InputRangeError(QPNetError, ValueError):
    """A value lies outside the domain an operation accepts."""


class ShapeError(QPNetError, ValueError):
    """Array shapes or lengths are inconsistent."""


class FormatError(QPNetError, ValueError):
    """A file on disk does not match the expected binary layout."""


class NotFittedError(QPNetError, AttributeError):
    """An estimator was used before ``fit``."""


class GraphError(QPNetError, RuntimeError):
    """Backward was requested on a value with no recorded computation."""
