"""Central finite-difference gradient checks."""

import numpy as np

from .tensor import backward


def numerical_gradient(fn, param, eps=1e-5):
    """Central differences of the scalar ``fn()`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn().data)
        flat[i] = orig - eps
        f_minus = float(fn().data)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn, params, eps=1e-5, floor=1e-6):
    """Compare reverse-mode and finite-difference gradients.

    Args:
        fn: zero-argument callable returning a scalar :class:`Tensor` built from ``params``.
        params (list): :class:`Parameter` objects to check.

    Returns:
        dict: parameter name (or index) -> max elementwise relative error.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    report = {}
    for i, (p, a) in enumerate(zip(params, analytic)):
        numeric = numerical_gradient(fn, p, eps)
        report[p.name or str(i)] = relative_error(a, numeric, floor)
    return report
