"""Differentiable kernels.

Sequences are laid out channels x time, ``(C, T)``. A batch of equal-length
windows is concatenated along time into ``(C, B * T)``; kernels that look
back in time take a ``segment`` length so that no window reads into the
previous one. Weights are ``(C_out, C_in)``.
"""

import numpy as np

from ..exceptions import InputRangeError, ShapeError
from .tensor import as_tensor, make_result


def _check_seq(x, name):
    if x.data.ndim != 2:
        raise ShapeError(f"{name}: expected a (C, T) tensor, got shape {x.shape}")


def conv1x1(x, weight, bias=None):
    """Pointwise convolution ``out[:, t] = weight @ x[:, t] + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_seq(x, "conv1x1")
    if weight.data.ndim != 2 or x.shape[0] != weight.shape[1]:
        raise ShapeError(f"conv1x1: weight {weight.shape} incompatible with input {x.shape}")
    out = weight.data @ x.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv1x1: bias {bias.shape} does not match weight {weight.shape}")
        out += bias.data[:, None]
        parents.append(bias)

    def backward_fn(g):
        grads = [
            weight.data.T @ g if x.requires_grad else None,
            g @ x.data.T if weight.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=1) if bias.requires_grad else None)
        return grads

    return make_result(out, parents, backward_fn)


def lookback_index(d, length, segment=None):
    """Source positions ``t - d[t]`` and a validity mask.

    Args:
        d: int or integer array of shape (length,).
        length (int): number of time steps.
        segment (int): window length when several windows are concatenated;
            a lookback that leaves its window is invalid.

    Returns:
        tuple: ``(index, valid)``; invalid entries of ``index`` are 0.
    """
    d = np.asarray(d)
    if d.ndim == 0:
        d = np.full(length, int(d))
    if d.shape != (length,):
        raise ShapeError(f"dilation sequence shape {d.shape} does not cover {length} steps")
    if np.any(d < 1):
        raise InputRangeError("dilations must be >= 1")
    t = np.arange(length)
    local = t if segment is None else t % segment
    if segment is not None and length % segment:
        raise ShapeError(f"length {length} is not a multiple of segment {segment}")
    valid = local - d >= 0
    return np.where(valid, t - d, 0), valid


def shift_gather(x, d, segment=None):
    """``x[:, t - d[t]]`` with zeros where the lookback is out of range (no gradient)."""
    x = np.asarray(x)
    idx, valid = lookback_index(d, x.shape[-1], segment)
    return np.where(valid, x[:, idx], 0.0)


def _scatter_add(g, idx, valid, length):
    """Adjoint of the lookback gather."""
    out = np.zeros((g.shape[0], length), dtype=g.dtype)
    cols = np.flatnonzero(valid)
    dest = idx[cols]
    if len(cols) < 2 or np.all(np.diff(dest) > 0):
        out[:, dest] = g[:, cols]
    else:
        np.add.at(out.T, dest, g[:, cols].T)
    return out


def _constant_shift(x, d, segment):
    """Lookback by a constant ``d`` via slicing; returns ``(past, adjoint)``."""
    if d < 1:
        raise InputRangeError("dilations must be >= 1")
    channels, length = x.shape
    seg = length if segment is None else segment
    if length % seg:
        raise ShapeError(f"length {length} is not a multiple of segment {seg}")
    shape = (channels, length // seg, seg)
    past = np.zeros(shape, dtype=x.dtype)
    if d < seg:
        past[:, :, d:] = x.reshape(shape)[:, :, :-d]

    def adjoint(g):
        out = np.zeros(shape, dtype=g.dtype)
        if d < seg:
            out[:, :, :-d] = g.reshape(shape)[:, :, d:]
        return out.reshape(channels, length)

    return past.reshape(channels, length), adjoint


def dilated_tap(x, d, w_current, w_previous, segment=None):
    """Two-tap dilated convolution ``w_current @ x[:, t] + w_previous @ x[:, t - d[t]]``.

    Args:
        x (Tensor): (C, T) input.
        d: dilation, an int or a per-step integer array of shape (T,).
            Positions with ``t - d[t] < 0`` read zeros.
        w_current, w_previous (Tensor): (C_out, C) filters.
        segment (int): optional window length for concatenated batches.
    """
    x, wc, wp = as_tensor(x), as_tensor(w_current), as_tensor(w_previous)
    _check_seq(x, "dilated_tap")
    if wc.shape != wp.shape or wc.data.ndim != 2 or x.shape[0] != wc.shape[1]:
        raise ShapeError(f"dilated_tap: filters {wc.shape}/{wp.shape} vs input {x.shape}")
    length = x.shape[1]
    if np.ndim(d) == 0:
        past, adjoint = _constant_shift(x.data, int(d), segment)
    else:
        idx, valid = lookback_index(d, length, segment)
        past = x.data[:, idx]
        past[:, ~valid] = 0.0

        def adjoint(g):
            return _scatter_add(g, idx, valid, length)

    out = wc.data @ x.data + wp.data @ past

    def backward_fn(g):
        gx = None
        if x.requires_grad:
            gx = wc.data.T @ g + adjoint(wp.data.T @ g)
        return [
            gx,
            g @ x.data.T if wc.requires_grad else None,
            g @ past.T if wp.requires_grad else None,
        ]

    return make_result(out, [x, wc, wp], backward_fn)


def sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def gated_unit(x_f, x_g, h_f, h_g):
    """Gated activation ``tanh(x_f + h_f) * sigmoid(x_g + h_g)``."""
    x_f, x_g, h_f, h_g = (as_tensor(t) for t in (x_f, x_g, h_f, h_g))
    shape = x_f.shape
    if not (x_g.shape == h_f.shape == h_g.shape == shape):
        raise ShapeError("gated_unit: all four inputs must share one shape")
    t = np.tanh(x_f.data + h_f.data)
    s = sigmoid(x_g.data + h_g.data)
    out = t * s

    def backward_fn(g):
        gf = g * s * (1.0 - t * t)
        gg = g * t * s * (1.0 - s)
        return [gf, gg, gf, gg]

    return make_result(out, [x_f, x_g, h_f, h_g], backward_fn)


def gated_halves(z):
    """Gated activation on stacked pre-activations: ``tanh(z[:C]) * sigmoid(z[C:])``.

    Equivalent to :func:`gated_unit` with the filter and gate inputs already
    summed and stacked along channels, which saves the slicing nodes.
    """
    z = as_tensor(z)
    _check_seq(z, "gated_halves")
    if z.shape[0] % 2:
        raise ShapeError(f"gated_halves: channel count {z.shape[0]} is odd")
    c = z.shape[0] // 2
    t = np.tanh(z.data[:c])
    s = sigmoid(z.data[c:])
    out = t * s

    def backward_fn(g):
        gz = np.empty_like(z.data)
        gs = g * s
        np.multiply(gs, 1.0 - t * t, out=gz[:c])
        np.multiply(gs * t, 1.0 - s, out=gz[c:])
        return [gz]

    return make_result(out, [z], backward_fn)


def rows(x, start, stop):
    """Channel slice ``x[start:stop]``."""
    x = as_tensor(x)
    n = x.shape[0]

    def backward_fn(g):
        full = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        full[start:stop] = g
        return [full]

    return make_result(x.data[start:stop], [x], backward_fn)


def add(*tensors):
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError(f"add: shapes differ {[t.shape for t in tensors]}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return make_result(out, tensors, lambda g: [g] * len(tensors))


def bias_add(x, bias):
    """Add a per-channel bias to a (C, T) tensor."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape != (x.shape[0],):
        raise ShapeError(f"bias {bias.shape} does not match channels of {x.shape}")
    return make_result(x.data + bias.data[:, None], [x, bias], lambda g: [g, g.sum(axis=1)])


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), [x], lambda g: [g * mask])


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, [x], lambda g: [g * (1.0 - out * out)])


def onehot_conv(indices, weight):
    """Pointwise convolution of one-hot inputs, ``out[:, t] = weight[:, indices[t]]``.

    Negative indices stand for an all-zero input vector.
    """
    weight = as_tensor(weight)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n_in = weight.shape[1]
    if idx.size and idx.max() >= n_in:
        raise InputRangeError(f"one-hot index {idx.max()} out of range {n_in}")
    valid = idx >= 0
    out = weight.data[:, np.where(valid, idx, 0)]
    out[:, ~valid] = 0.0

    def backward_fn(g):
        # per-class column sums of g, via a sort + segmented reduction
        cols = np.flatnonzero(valid)
        order = cols[np.argsort(idx[cols], kind="stable")]
        keys = idx[order]
        gw = np.zeros_like(weight.data)
        if len(order):
            starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
            gw[:, keys[starts]] = np.add.reduceat(g[:, order], starts, axis=1)
        return [gw]

    return make_result(out, [weight], backward_fn)


def log_softmax(logits, axis=0):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits, axis=0):
    return np.exp(log_softmax(logits, axis))


def softmax_cross_entropy(logits, targets):
    """Mean categorical cross-entropy and its gradient.

    Args:
        logits (np.ndarray): (K, T) unnormalized scores.
        targets (np.ndarray): (T,) integer classes.

    Returns:
        tuple: ``(loss, grad)`` with ``grad = (softmax - onehot) / T``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or targets.shape != (logits.shape[1],):
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    n_classes, n = logits.shape
    if n and (targets.min() < 0 or targets.max() >= n_classes):
        raise InputRangeError(f"targets must lie in [0, {n_classes - 1}]")
    cols = np.arange(n)
    logp = log_softmax(logits)
    loss = -logp[targets, cols].sum() / n
    grad = np.exp(logp)
    grad[targets, cols] -= 1.0
    return float(loss), grad / n


def cross_entropy(logits, targets):
    """Differentiable wrapper of :func:`softmax_cross_entropy` returning a scalar tensor."""
    logits = as_tensor(logits)
    loss, grad = softmax_cross_entropy(logits.data, targets)
    return make_result(np.array(loss), [logits], lambda g: [g * grad])


def weighted_squared_error(pred, target, inv_var):
    """``0.5 * mean_n sum_d inv_var[d] * (target - pred)^2`` for (D, N) layouts."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    inv_var = np.asarray(inv_var, dtype=np.float64)
    if target.shape != pred.shape or inv_var.shape != (pred.shape[0],):
        raise ShapeError("weighted_squared_error: shape mismatch")
    diff = pred.data - target
    n = pred.shape[-1]
    loss = 0.5 * np.sum(inv_var[:, None] * diff ** 2) / n
    return make_result(np.array(loss), [pred], lambda g: [g * inv_var[:, None] * diff / n])
