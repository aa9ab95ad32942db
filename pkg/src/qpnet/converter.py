"""Framewise DNN spectral conversion with MLPG smoothing, GV postfilter and F0 mapping."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solveh_banded
from sklearn.base import BaseEstimator, TransformerMixin

from . import nn
from .codec import FrameFeatures
from .exceptions import FormatError, InputRangeError, ShapeError
from .validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
DELTA_WINDOW = (-0.5, 0.0, 0.5)


def delta_operator(n_frames):
    """Sparse (T, T) matrix mapping statics to deltas with edge replication."""
    if n_frames < 1:
        raise ShapeError("need at least one frame")
    prev = np.maximum(np.arange(n_frames) - 1, 0)
    nxt = np.minimum(np.arange(n_frames) + 1, n_frames - 1)
    rows = np.r_[np.arange(n_frames), np.arange(n_frames)]
    cols = np.r_[prev, nxt]
    vals = np.r_[np.full(n_frames, DELTA_WINDOW[0]), np.full(n_frames, DELTA_WINDOW[2])]
    # coo -> csr sums duplicates, so T = 1 collapses to an all-zero row
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n_frames, n_frames)).tocsr()


def append_deltas(static):
    """Stack ``[static | delta]`` per frame, ``delta[n] = 0.5 * (c[n+1] - c[n-1])``.

    Args:
        static (np.ndarray): (T, M) static features.

    Returns:
        np.ndarray: (T, 2M).
    """
    static = check_array(static, ndim=2, name="static")
    padded = np.concatenate([static[:1], static, static[-1:]])
    delta = 0.5 * (padded[2:] - padded[:-2])
    return np.concatenate([static, delta], axis=1)


def mlpg(means, sigma):
    """Maximum-likelihood static trajectory from static+delta means.

    Solves ``(W' S^-1 W) c = W' S^-1 mu`` per dimension with a banded
    Cholesky solve; ``W`` stacks the identity and the delta operator.

    Args:
        means (np.ndarray): (T, 2M) predicted means.
        sigma (np.ndarray): (2M,) diagonal variances.

    Returns:
        np.ndarray: (T, M) trajectory.
    """
    means = check_array(means, ndim=2, name="means")
    sigma = check_array(sigma, ndim=1, name="sigma")
    n_frames, width = means.shape
    if width % 2 or sigma.shape != (width,):
        raise ShapeError(f"means {means.shape} and sigma {sigma.shape} are inconsistent")
    if np.any(sigma <= 0):
        raise InputRangeError("sigma entries must be positive")
    m = width // 2
    D = delta_operator(n_frames)
    DtD = (D.T @ D).todia()
    bands = np.zeros((3, n_frames))  # upper form, 2 super-diagonals
    for k in range(3):
        diag = DtD.diagonal(k)
        bands[2 - k, k:] = diag
    prec = 1.0 / sigma
    out = np.empty((n_frames, m))
    for d in range(m):
        ps, pd = prec[d], prec[m + d]
        ab = pd * bands
        ab[2] += ps
        rhs = ps * means[:, d] + pd * (D.T @ means[:, m + d])
        out[:, d] = solveh_banded(ab, rhs) if n_frames > 1 else rhs / ab[2]
    return out


def gv_postfilter(trajectory, gv_target):
    """Rescale each dim ``d >= 1`` around its mean so its variance equals ``gv_target[d]``.

    Dimension 0 and dims with zero variance pass through unchanged.
    """
    traj = check_array(trajectory, ndim=2, name="trajectory")
    gv_target = check_array(gv_target, ndim=1, name="gv_target")
    if len(traj) < 2:
        raise ShapeError("GV postfilter needs at least two frames")
    if gv_target.shape != (traj.shape[1],):
        raise ShapeError(f"gv_target {gv_target.shape} vs trajectory {traj.shape}")
    out = traj.copy()
    mean = traj.mean(axis=0)
    var = traj.var(axis=0)
    for d in range(1, traj.shape[1]):
        # ptp catches constant dims whose computed variance is rounding noise
        if var[d] > 0 and np.ptp(traj[:, d]) > 0:
            out[:, d] = np.sqrt(gv_target[d] / var[d]) * (traj[:, d] - mean[d]) + mean[d]
    return out


@dataclass(frozen=True)
class LogF0Stats:
    src_mean: float
    src_std: float
    tgt_mean: float
    tgt_std: float

    def as_array(self):
        return np.array([self.src_mean, self.src_std, self.tgt_mean, self.tgt_std])


def voiced_logf0(f0_list, uv_list=None):
    """Concatenated natural-log F0 of voiced frames."""
    parts = []
    for i, f0 in enumerate(f0_list):
        f0 = np.asarray(f0, dtype=np.float64)
        mask = f0 > 0 if uv_list is None else (np.asarray(uv_list[i]) > 0.5) & (f0 > 0)
        parts.append(np.log(f0[mask]))
    return np.concatenate(parts) if parts else np.zeros(0)


def fit_logf0_stats(src_logf0, tgt_logf0):
    if len(src_logf0) == 0 or len(tgt_logf0) == 0:
        raise ShapeError("F0 statistics need voiced frames on both sides")
    return LogF0Stats(float(np.mean(src_logf0)), float(np.std(src_logf0)),
                      float(np.mean(tgt_logf0)), float(np.std(tgt_logf0)))


def transform_logf0(f0, stats):
    """Map positive F0 values linearly in the log domain; zeros (unvoiced) stay zero."""
    f0 = check_array(f0, ndim=1, name="f0", allow_empty=True)
    if stats.src_std <= 0:
        raise InputRangeError("source log-F0 standard deviation must be positive")
    out = f0.copy()
    voiced = f0 > 0
    z = (np.log(f0[voiced]) - stats.src_mean) / stats.src_std
    out[voiced] = np.exp(z * stats.tgt_std + stats.tgt_mean)
    return out


def init_dnn(n_in, n_out, hidden=(64, 64), seed=0):
    """Feedforward weights as a list of ``(W, b)`` parameter pairs."""
    rng = np.random.default_rng(seed)
    sizes = [n_in, *hidden, n_out]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = nn.Parameter(rng.uniform(-bound, bound, (fan_out, fan_in)), name=f"dnn.{k}.w")
        b = nn.Parameter(np.zeros(fan_out), name=f"dnn.{k}.b")
        layers.append((w, b))
    return layers


def dnn_forward(layers, x):
    """tanh hidden layers and a linear output; ``x`` is (D_in, N)."""
    h = x
    for k, (w, b) in enumerate(layers):
        h = nn.conv1x1(h, w, b)
        if k < len(layers) - 1:
            h = nn.tanh(h)
    return h


@dataclass
class ConversionModel:
    """Trained converter: DNN weights, input/output standardization and postprocessing statistics."""

    layers: list
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    sigma: np.ndarray
    gv_target: np.ndarray
    logf0: LogF0Stats

    @property
    def static_dim(self):
        return len(self.gv_target)

    def parameters(self):
        return [p for pair in self.layers for p in pair]

    def state_arrays(self):
        arrays = {p.name: p.data for p in self.parameters()}
        arrays.update({"stats.in_mean": self.in_mean, "stats.in_std": self.in_std,
                       "stats.out_mean": self.out_mean, "stats.out_std": self.out_std,
                       "stats.sigma": self.sigma, "stats.gv": self.gv_target,
                       "stats.logf0": self.logf0.as_array()})
        return arrays


def _normalize(model, sd):
    return ((sd - model.in_mean) / model.in_std).T


def _normalized_target(model, sd):
    """Targets in the network's output units and the matching squared-error weights.

    With ``y = out_mean + out_std * p`` the sigma-weighted error equals the
    error on standardized targets weighted by ``out_std^2 / sigma``.
    """
    return ((sd - model.out_mean) / model.out_std).T, model.out_std ** 2 / model.sigma


def convert(model, source_sd):
    """Predicted target static+delta means (T, 2M) for source vectors (T, 2M)."""
    source_sd = check_array(source_sd, ndim=2, name="source_sd")
    if source_sd.shape[1] != len(model.in_mean):
        raise ShapeError(f"source has {source_sd.shape[1]} dims, model expects {len(model.in_mean)}")
    with nn.no_grad():
        out = dnn_forward(model.layers, nn.Tensor(_normalize(model, source_sd)))
    return model.out_mean + model.out_std * out.data.T


def objective(model, source_sd, target_sd):
    """Sigma-weighted squared error averaged over frames."""
    with nn.no_grad():
        pred = dnn_forward(model.layers, nn.Tensor(_normalize(model, source_sd)))
        loss = nn.weighted_squared_error(pred, *_normalized_target(model, target_sd))
    return float(loss.data)


def _sgd(params, lr):
    for p in params:
        p.data = p.data - lr * p.grad


def train_converter(source_sd, target_sd, target_static=None, hidden=(64, 64), epochs=100,
                    lr=1e-3, batch_size=256, optimizer="adam", seed=0, logf0=None):
    """Fit the converter on time-aligned parallel utterances.

    Args:
        source_sd, target_sd (list): per-utterance (T, 2M) static+delta matrices.
        target_static (list): per-utterance target statics for the GV statistics;
            defaults to the static half of ``target_sd``.
        hidden (tuple): hidden layer widths.
        epochs (int): passes over the shuffled frames.
        batch_size (int or None): frames per update; ``None`` is full batch.
        optimizer (str): ``"adam"`` or ``"sgd"`` (plain gradient descent).
        logf0 (LogF0Stats): F0 statistics to store with the model.

    Returns:
        tuple: ``(ConversionModel, losses)`` where ``losses[0]`` is the initial
        objective and ``losses[e]`` the objective after epoch ``e``.
    """
    if len(source_sd) != len(target_sd) or not source_sd:
        raise ShapeError("need equally many non-empty source and target utterances")
    for s, t in zip(source_sd, target_sd):
        if len(s) != len(t):
            raise ShapeError(f"parallel utterances differ in frame count: {len(s)} vs {len(t)}")
    if optimizer not in ("adam", "sgd"):
        raise InputRangeError(f"unknown optimizer {optimizer!r}")
    X = np.concatenate([check_array(s, ndim=2, name="source_sd") for s in source_sd])
    Y = np.concatenate([check_array(t, ndim=2, name="target_sd") for t in target_sd])
    m = Y.shape[1] // 2
    statics = target_static or [t[:, :m] for t in target_sd]
    sigma = np.maximum(Y.var(axis=0), SIGMA_FLOOR)
    model = ConversionModel(
        layers=init_dnn(X.shape[1], Y.shape[1], hidden, seed),
        in_mean=X.mean(axis=0),
        in_std=np.maximum(X.std(axis=0), SIGMA_FLOOR),
        out_mean=Y.mean(axis=0),
        out_std=np.sqrt(sigma),
        sigma=sigma,
        gv_target=np.maximum(np.mean([np.var(s, axis=0) for s in statics], axis=0), SIGMA_FLOOR),
        logf0=logf0 or LogF0Stats(0.0, 1.0, 0.0, 1.0),
    )
    Xn = _normalize(model, X)
    Yn, weights = _normalized_target(model, Y)
    params = model.parameters()
    adam = nn.Adam(params, lr=lr) if optimizer == "adam" else None
    rng = np.random.default_rng(seed)
    n = len(X)
    size = n if batch_size is None else min(batch_size, n)
    losses = [objective(model, X, Y)]
    for epoch in range(epochs):
        order = rng.permutation(n) if size < n else np.arange(n)
        for start in range(0, n, size):
            idx = order[start:start + size]
            for p in params:
                p.zero_grad()
            pred = dnn_forward(model.layers, nn.Tensor(Xn[:, idx]))
            nn.backward(nn.weighted_squared_error(pred, Yn[:, idx], weights))
            if adam is not None:
                adam.step()
            else:
                _sgd(params, lr)
        losses.append(objective(model, X, Y))
        logger.debug("converter epoch %d loss %.5f", epoch + 1, losses[-1])
    return model, losses


def convert_features(model, features, use_gv=True):
    """Convert one utterance: mcep via DNN + MLPG (+ GV), F0 log-linearly, ap unchanged."""
    if features.mcep_dim != model.static_dim:
        raise ShapeError(f"features have {features.mcep_dim} mcep dims, model {model.static_dim}")
    traj = mlpg(convert(model, append_deltas(features.mcep)), model.sigma)
    if use_gv and len(traj) >= 2:
        traj = gv_postfilter(traj, model.gv_target)
    return features.replace(continuous_f0=transform_logf0(features.continuous_f0, model.logf0),
                            mcep=traj)


def save_converter(path, model):
    descriptor = {"kind": "converter", "layers": len(model.layers)}
    nn.save_checkpoint(path, descriptor, model.state_arrays())


def load_converter(path):
    descriptor, arrays = nn.load_checkpoint(path)
    if descriptor.get("kind") != "converter":
        raise FormatError(f"{path} is not a converter checkpoint")
    try:
        layers = [(nn.Parameter(arrays[f"dnn.{k}.w"], name=f"dnn.{k}.w"),
                   nn.Parameter(arrays[f"dnn.{k}.b"], name=f"dnn.{k}.b"))
                  for k in range(descriptor["layers"])]
        stats = arrays["stats.logf0"]
        return ConversionModel(layers, arrays["stats.in_mean"], arrays["stats.in_std"],
                               arrays["stats.out_mean"], arrays["stats.out_std"],
                               arrays["stats.sigma"], arrays["stats.gv"],
                               LogF0Stats(*(float(v) for v in stats)))
    except KeyError as exc:
        raise FormatError(f"{path}: missing blob {exc}") from None


class SpectralConverter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(source_features, target_features)``, ``transform(features)``.

    Args:
        hidden (tuple): hidden layer widths.
        epochs (int): training epochs.
        lr (float): learning rate.
        batch_size (int): frames per update.
        use_gv (bool): apply the GV postfilter after MLPG.
    """

    def __init__(self, hidden=(64, 64), epochs=100, lr=1e-3, batch_size=256,
                 optimizer="adam", use_gv=True, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.use_gv = use_gv
        self.seed = seed

    def fit(self, X, y):
        if len(X) != len(y) or not X:
            raise ShapeError("need equally many source and target feature sets")
        stats = fit_logf0_stats(voiced_logf0([f.continuous_f0 for f in X], [f.uv for f in X]),
                                voiced_logf0([f.continuous_f0 for f in y], [f.uv for f in y]))
        self.model_, self.loss_curve_ = train_converter(
            [append_deltas(f.mcep) for f in X], [append_deltas(f.mcep) for f in y],
            [f.mcep for f in y], tuple(self.hidden), self.epochs, self.lr, self.batch_size,
            self.optimizer, self.seed, stats)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        if isinstance(X, FrameFeatures):
            return convert_features(self.model_, X, self.use_gv)
        return [convert_features(self.model_, f, self.use_gv) for f in X]
