"""Input validation helpers used by the estimators and free functions."""

import numpy as np

from .exceptions import InputRangeError, NotFittedError, ShapeError


def check_array(x, ndim=None, dtype=np.float64, name="input", allow_empty=False):
    """Convert ``x`` to a contiguous ndarray and check its rank.

    Args:
        x: array-like input.
        ndim (int or tuple): accepted number(s) of dimensions.
        dtype: target dtype, or ``None`` to keep the input dtype.
        name (str): label used in error messages.
        allow_empty (bool): whether zero-size arrays are accepted.

    Returns:
        np.ndarray: the validated array.
    """
    arr = np.ascontiguousarray(x, dtype=dtype)
    if ndim is not None:
        accepted = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in accepted:
            raise ShapeError(f"{name} must have ndim in {accepted}, got {arr.ndim}")
    if not allow_empty and arr.size == 0:
        raise ShapeError(f"{name} is empty")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise InputRangeError(f"{name} contains non-finite values")
    return arr


def check_positive_int(value, name):
    if int(value) != value or value <= 0:
        raise InputRangeError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_same_length(*arrays, names=None):
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"length mismatch between {label}: {lengths}")
    return lengths[0]


def check_is_fitted(estimator, attributes):
    """Raise :class:`NotFittedError` unless every attribute is set."""
    if isinstance(attributes, str):
        attributes = [attributes]
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet (missing {missing}); call fit first"
        )
