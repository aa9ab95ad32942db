"""WaveNet / QPNet vocoder: assembly, teacher-forced training and cached generation."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import nn
from .codec import DEFAULT_RATE, WaveBuffer, mulaw_decode, mulaw_encode, upsample_features
from .dilation import ArchitectureSpec, DilationPlan, build_plan, plan_from_f0, preset
from .exceptions import FormatError, ShapeError
from .nn.ops import bias_add, gated_halves, sigmoid
from .validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

N_CLASSES = 256


@dataclass
class VocoderParams:
    """Trainable tensors of a vocoder plus its architecture and aux normalization.

    ``params`` is ordered: causal entry, residual blocks in network order, head.
    """

    spec: ArchitectureSpec
    params: dict
    rate: int = DEFAULT_RATE
    aux_mean: np.ndarray = None
    aux_std: np.ndarray = None
    blocks: list = field(default_factory=list)

    def parameters(self):
        return list(self.params.values())

    def head_parameters(self):
        return [p for name, p in self.params.items() if name.startswith("head.")]

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def copy(self):
        clone = nn.Parameter
        params = {}
        for name, p in self.params.items():
            params[name] = clone(p.data.copy(), name=name, trainable=p.trainable)
        return VocoderParams(self.spec, params, self.rate,
                             None if self.aux_mean is None else self.aux_mean.copy(),
                             None if self.aux_std is None else self.aux_std.copy(),
                             list(self.blocks))

    def state_arrays(self):
        arrays = {name: p.data for name, p in self.params.items()}
        arrays["norm.aux_mean"] = self.aux_mean
        arrays["norm.aux_std"] = self.aux_std
        return arrays

    def descriptor(self):
        return {"kind": "vocoder", "spec": self.spec.to_json(), "rate": self.rate}


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build(spec, seed=0, rate=DEFAULT_RATE):
    """Allocate a vocoder for ``spec``.

    Layout: kernel-2 causal entry over one-hot codes, fixed and adaptive
    residual blocks (order per ``spec.fixed_first``), summed skips, then
    relu -> 1x1 -> relu -> 1x1 to 256 logits. Weights are uniform with
    bound ``1/sqrt(fan_in)``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    R, S, H, A = spec.residual_channels, spec.skip_channels, spec.head_channels, spec.aux_channels
    params = {}

    def add(name, shape, fan_in=None):
        data = np.zeros(shape) if fan_in is None else _uniform(rng, shape, fan_in)
        params[name] = nn.Parameter(data, name=name)

    add("causal.w_cur", (R, N_CLASSES), 2 * N_CLASSES)
    add("causal.w_prev", (R, N_CLASSES), 2 * N_CLASSES)
    add("causal.b", (R,))
    fixed = [("fixed", k) for k in range(spec.n_fixed)]
    adaptive = [("adaptive", k) for k in range(spec.n_adaptive)]
    blocks = fixed + adaptive if spec.fixed_first else adaptive + fixed
    for kind, k in blocks:
        pre = f"{kind}.{k}."
        # filter rows [:R], gate rows [R:]
        add(pre + "tap.cur", (2 * R, R), 2 * R)
        add(pre + "tap.prev", (2 * R, R), 2 * R)
        add(pre + "aux.w", (2 * R, A), A)
        add(pre + "aux.b", (2 * R,))
        add(pre + "skip.w", (S, R), R)
        add(pre + "skip.b", (S,))
        add(pre + "res.w", (R, R), R)
        add(pre + "res.b", (R,))
    add("head.1.w", (H, S), S)
    add("head.1.b", (H,))
    add("head.2.w", (N_CLASSES, H), H)
    add("head.2.b", (N_CLASSES,))
    aux_mean = np.zeros(A)
    aux_std = np.ones(A)
    return VocoderParams(spec, params, rate, aux_mean, aux_std, blocks)


def count_parameters(spec):
    """Closed-form parameter count of :func:`build` for ``spec``."""
    R, S, H, A = spec.residual_channels, spec.skip_channels, spec.head_channels, spec.aux_channels
    causal = 2 * R * N_CLASSES + R
    block = 2 * (2 * R * R) + (2 * R * A + 2 * R) + (S * R + S) + (R * R + R)
    head = H * S + H + N_CLASSES * H + N_CLASSES
    return causal + (spec.n_fixed + spec.n_adaptive) * block + head


def aux_transform(aux):
    """Column 0 (continuous F0 in Hz) is modelled in log-Hz."""
    out = np.array(aux, dtype=np.float64, copy=True)
    out[..., 0] = np.log(np.maximum(out[..., 0], 1e-3))
    return out


def fit_aux_stats(vp, aux_list):
    """Set per-column z-score statistics from a list of (T, A) aux matrices."""
    stacked = aux_transform(np.concatenate(aux_list, axis=0))
    vp.aux_mean = stacked.mean(axis=0)
    vp.aux_std = np.maximum(stacked.std(axis=0), 1e-3)
    return vp


def normalize_aux(vp, aux):
    """(T, A) raw aux -> (A, T) normalized network input."""
    aux = np.asarray(aux, dtype=np.float64)
    if aux.shape[-1] != vp.spec.aux_channels:
        raise ShapeError(f"aux has {aux.shape[-1]} columns, network expects {vp.spec.aux_channels}")
    z = (aux_transform(aux) - vp.aux_mean) / vp.aux_std
    return np.ascontiguousarray(z.T)


def _layer_dilations(vp, plans):
    """Per-layer dilations in network order: ints for fixed layers, flat arrays for adaptive ones."""
    out = []
    fixed = iter(plans[0].fixed_dilations)
    if vp.spec.n_adaptive and any(len(p.adaptive_dilations) == 0 for p in plans):
        raise ShapeError("adaptive network needs a plan covering every sample")
    for kind, k in vp.blocks:
        if kind == "fixed":
            out.append(next(fixed))
        else:
            out.append(np.concatenate([p.adaptive_dilations[:, k] for p in plans]))
    return out


def shifted_inputs(codes):
    """Causal-layer inputs: code ``t-1`` at step ``t`` (``-1`` = zero vector) and the step before."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    pad = np.full((len(codes), 1), -1, dtype=np.int64)
    cur = np.concatenate([pad, codes[:, :-1]], axis=1)
    prev = np.concatenate([pad, cur[:, :-1]], axis=1)
    return cur.reshape(-1), prev.reshape(-1)


def forward_tensor(vp, codes, aux_n, dilations, params=None, segment=None):
    """Recorded forward pass returning the (256, N) logits tensor.

    Args:
        codes: (T,) target codes, or (B, T) for a batch of windows (inputs
            are the codes shifted by one within each window).
        aux_n: normalized aux, (A, N) with ``N = B * T``.
        dilations: per-layer dilations from :func:`_layer_dilations`.
        params: optional name -> tensor mapping overriding ``vp.params``.
        segment: window length of a concatenated batch.
    """
    P = vp.params if params is None else params
    cur, prev = shifted_inputs(codes)
    h = nn.add(nn.onehot_conv(cur, P["causal.w_cur"]), nn.onehot_conv(prev, P["causal.w_prev"]))
    h = bias_add(h, P["causal.b"])
    skips = []
    for (kind, k), d in zip(vp.blocks, dilations):
        pre = f"{kind}.{k}."
        x = nn.dilated_tap(h, d, P[pre + "tap.cur"], P[pre + "tap.prev"], segment)
        a = nn.conv1x1(aux_n, P[pre + "aux.w"], P[pre + "aux.b"])
        z = gated_halves(nn.add(x, a))
        skips.append(nn.conv1x1(z, P[pre + "skip.w"], P[pre + "skip.b"]))
        h = nn.add(h, nn.conv1x1(z, P[pre + "res.w"], P[pre + "res.b"]))
    out = nn.relu(nn.add(*skips))
    out = nn.relu(nn.conv1x1(out, P["head.1.w"], P["head.1.b"]))
    return nn.conv1x1(out, P["head.2.w"], P["head.2.b"])


def _cast_params(vp, dtype):
    return {name: nn.Tensor(p.data.astype(dtype)) for name, p in vp.params.items()}


def _check_plan(vp, plan, length):
    if vp.spec.n_adaptive:
        if plan.n_adaptive != vp.spec.n_adaptive or len(plan.adaptive_dilations) != length:
            raise ShapeError(f"dilation plan does not cover {length} samples for this network")
    if tuple(plan.fixed_dilations) != tuple(vp.spec.fixed_dilations()):
        raise ShapeError("dilation plan was built for a different architecture")


def teacher_forced_forward(vp, codes, aux, plan, dtype=np.float64):
    """Logits (256, T) for every position given the true past codes.

    Position ``t`` sees codes ``< t`` and aux rows ``<= t`` only.
    """
    codes = check_array(codes, ndim=1, dtype=np.int64, name="codes")
    aux = check_array(aux, ndim=2, name="aux")
    if len(aux) != len(codes):
        raise ShapeError(f"aux rows ({len(aux)}) != code count ({len(codes)})")
    _check_plan(vp, plan, len(codes))
    aux_n = normalize_aux(vp, aux).astype(dtype)
    params = None if dtype == np.float64 else _cast_params(vp, dtype)
    with nn.no_grad():
        logits = forward_tensor(vp, codes, aux_n, _layer_dilations(vp, [plan]), params)
    return logits.data


@dataclass
class TrainingExample:
    """One utterance prepared for the vocoder: codes, per-sample aux and its dilation plan."""

    codes: np.ndarray
    aux: np.ndarray
    plan: DilationPlan

    def __len__(self):
        return len(self.codes)

    def window(self, start, stop):
        return TrainingExample(self.codes[start:stop], self.aux[start:stop],
                               self.plan.window(start, stop))


def prepare_example(spec, wave, features, rate=None):
    """Align a waveform with its frame features and build the dilation plan."""
    aux = upsample_features(features)
    n = min(len(aux), len(wave))
    n -= n % features.hop
    aux = aux[:n]
    samples = wave.samples if isinstance(wave, WaveBuffer) else np.asarray(wave)
    codes = mulaw_encode(samples[:n])
    rate = rate or getattr(wave, "rate", DEFAULT_RATE)
    return TrainingExample(codes, aux, plan_from_f0(spec, aux[:, 0], rate))


def sample_windows(examples, batch_samples, window, rng):
    """Draw ``batch_samples // window`` random contiguous windows, length-weighted."""
    n_windows = max(1, batch_samples // window)
    usable = [ex for ex in examples if len(ex) >= window]
    if not usable:
        raise ShapeError(f"no utterance is at least {window} samples long")
    weights = np.array([len(ex) - window + 1 for ex in usable], dtype=np.float64)
    picks = rng.choice(len(usable), size=n_windows, p=weights / weights.sum())
    batch = []
    for i in picks:
        start = int(rng.integers(0, len(usable[i]) - window + 1))
        batch.append(usable[i].window(start, start + window))
    return batch


def batch_loss(vp, batch):
    """Recorded mean cross-entropy over a batch of equal-length examples."""
    if not batch:
        raise ShapeError("empty batch")
    length = len(batch[0])
    if any(len(ex) != length for ex in batch):
        raise ShapeError("batch windows must share one length")
    codes = np.stack([ex.codes for ex in batch])
    aux_n = normalize_aux(vp, np.concatenate([ex.aux for ex in batch]))
    dilations = _layer_dilations(vp, [ex.plan for ex in batch])
    logits = forward_tensor(vp, codes, aux_n, dilations, segment=length)
    return nn.cross_entropy(logits, codes.reshape(-1))


def train_step(vp, batch, optimizer):
    """One optimizer step on the mean cross-entropy of ``batch``; returns the pre-step loss."""
    optimizer.zero_grad()
    loss = batch_loss(vp, batch)
    nn.backward(loss)
    optimizer.step()
    return float(loss.data)


def evaluate_loss(vp, examples):
    """Mean teacher-forced cross-entropy over whole examples, without recording."""
    total, count = 0.0, 0
    with nn.no_grad():
        for ex in examples:
            logits = forward_tensor(vp, ex.codes, normalize_aux(vp, ex.aux),
                                    _layer_dilations(vp, [ex.plan]))
            loss, _ = nn.softmax_cross_entropy(logits.data, ex.codes)
            total += loss * len(ex)
            count += len(ex)
    return total / count


def train(vp, examples, steps, lr=1e-3, batch_samples=4096, window=1024, seed=0,
          optimizer=None, log_every=0):
    """Teacher-forced training loop.

    Returns:
        list: per-step training losses.
    """
    rng = np.random.default_rng(seed)
    optimizer = optimizer or nn.Adam(vp.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        batch = sample_windows(examples, batch_samples, window, rng)
        losses.append(train_step(vp, batch, optimizer))
        if log_every and (step + 1) % log_every == 0:
            logger.info("step %d loss %.4f", step + 1, np.mean(losses[-log_every:]))
    return losses


class GenerationState:
    """Per-layer ring buffers for sample-by-sample generation.

    Buffer ``k`` holds the recent inputs of residual layer ``k``; its capacity
    is one more than the largest dilation the plan uses for that layer, so the
    value ``t - d_k(t)`` steps back is always still resident.
    """

    def __init__(self, vp, plan, aux_n, dtype=np.float32):
        spec = vp.spec
        R, S = spec.residual_channels, spec.skip_channels
        self.dtype = dtype
        self.dilations = _layer_dilations(vp, [plan])
        self.capacity = [int(np.max(d)) + 1 for d in self.dilations]
        self.buffers = [np.zeros((cap, R), dtype=dtype) for cap in self.capacity]
        self.t = 0
        self.prev_codes = [-1, -1]
        p = {name: t.data.astype(dtype) for name, t in vp.params.items()}
        self.causal_cur = np.ascontiguousarray(p["causal.w_cur"].T)
        self.causal_prev = np.ascontiguousarray(p["causal.w_prev"].T)
        self.causal_b = p["causal.b"]
        self.layers = []
        for kind, k in vp.blocks:
            pre = f"{kind}.{k}."
            w_cur, w_prev = p[pre + "tap.cur"], p[pre + "tap.prev"]
            aux_proj = (p[pre + "aux.w"] @ aux_n.astype(dtype) + p[pre + "aux.b"][:, None]).T.copy()
            w_out = np.concatenate([p[pre + "skip.w"], p[pre + "res.w"]])
            b_out = np.concatenate([p[pre + "skip.b"], p[pre + "res.b"]])
            self.layers.append((w_cur, w_prev, aux_proj, w_out, b_out))
        self.head = (p["head.1.w"], p["head.1.b"], p["head.2.w"], p["head.2.b"])
        self.R, self.S = R, S
        self.zero = np.zeros(R, dtype=dtype)

    def step(self):
        """Logits for position ``self.t`` from the codes fed so far."""
        t, R, S = self.t, self.R, self.S
        h = self.causal_b.copy()
        cur, prev = self.prev_codes[1], self.prev_codes[0]
        if cur >= 0:
            h += self.causal_cur[cur]
        if prev >= 0:
            h += self.causal_prev[prev]
        skip = np.zeros(S, dtype=self.dtype)
        for k, (w_cur, w_prev, aux_proj, w_out, b_out) in enumerate(self.layers):
            d = self.dilations[k]
            d = int(d if np.isscalar(d) else d[t])
            buf, cap = self.buffers[k], self.capacity[k]
            buf[t % cap] = h
            past = buf[(t - d) % cap] if t >= d else self.zero
            pre = w_cur @ h + w_prev @ past + aux_proj[t]
            z = np.tanh(pre[:R]) * sigmoid(pre[R:])
            out = w_out @ z + b_out
            skip += out[:S]
            h = h + out[S:]
        w1, b1, w2, b2 = self.head
        y = np.maximum(skip, 0)
        y = np.maximum(w1 @ y + b1, 0)
        return w2 @ y + b2

    def feed(self, code):
        """Advance the cursor after emitting ``code`` at position ``self.t``."""
        self.prev_codes = [self.prev_codes[1], int(code)]
        self.t += 1


def _draw(logits, temperature, rng):
    if temperature <= 0:
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / temperature
    p = np.exp(z - z.max())
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))


def generate(vp, aux, plan, seed=0, temperature=1.0, dtype=np.float32, return_logits=False):
    """Autoregressive sampling with cached layer histories.

    Args:
        aux (np.ndarray): (T, A) per-sample raw aux features.
        plan (DilationPlan): covers the same T samples.
        seed (int): sampling seed; irrelevant when ``temperature <= 0`` (argmax).
        dtype: arithmetic precision of the cached path.

    Returns:
        tuple: ``(codes, WaveBuffer)``, plus the (256, T) logits when ``return_logits``.
    """
    aux = check_array(aux, ndim=2, name="aux")
    T = len(aux)
    _check_plan(vp, plan, T)
    state = GenerationState(vp, plan, normalize_aux(vp, aux), dtype)
    rng = np.random.default_rng(seed)
    codes = np.zeros(T, dtype=np.int64)
    logits = np.zeros((N_CLASSES, T), dtype=dtype) if return_logits else None
    for t in range(T):
        out = state.step()
        if return_logits:
            logits[:, t] = out
        codes[t] = _draw(out, temperature, rng)
        state.feed(codes[t])
    wave = mulaw_decode(codes, rate=vp.rate)
    return (codes, wave, logits) if return_logits else (codes, wave)


def save_vocoder(path, vp):
    nn.save_checkpoint(path, vp.descriptor(), vp.state_arrays())


def load_vocoder(path):
    descriptor, arrays = nn.load_checkpoint(path)
    if descriptor.get("kind") != "vocoder":
        raise FormatError(f"{path} is not a vocoder checkpoint")
    spec = ArchitectureSpec.from_json(descriptor["spec"])
    vp = build(spec, seed=0, rate=descriptor["rate"])
    for name, p in vp.params.items():
        if name not in arrays or arrays[name].shape != p.data.shape:
            raise FormatError(f"{path}: missing or mis-shaped parameter {name}")
        p.data = arrays[name]
    vp.aux_mean = arrays["norm.aux_mean"]
    vp.aux_std = arrays["norm.aux_std"]
    return vp


class QPNetVocoder(BaseEstimator):
    """Estimator wrapper: ``fit(features, waves)`` trains, ``predict(features)`` generates.

    Args:
        arch (str): preset name (``desk-qpnet``, ``desk-wn``, ``wnf``, ``wnc``, ``qpnet``).
        residual_channels, skip_channels, head_channels (int): optional overrides.
        steps (int): training iterations.
        lr (float): Adam learning rate.
        batch_samples (int): samples per update, split into ``window``-long pieces.
        temperature (float): sampling temperature for ``predict``; ``0`` is argmax.
    """

    def __init__(self, arch="desk-qpnet", residual_channels=None, skip_channels=None,
                 head_channels=None, a=None, steps=2000, lr=1e-3, batch_samples=4096,
                 window=1024, temperature=1.0, rate=DEFAULT_RATE, seed=0):
        self.arch = arch
        self.residual_channels = residual_channels
        self.skip_channels = skip_channels
        self.head_channels = head_channels
        self.a = a
        self.steps = steps
        self.lr = lr
        self.batch_samples = batch_samples
        self.window = window
        self.temperature = temperature
        self.rate = rate
        self.seed = seed

    def _spec(self, aux_channels):
        overrides = {k: getattr(self, k) for k in
                     ("residual_channels", "skip_channels", "head_channels", "a")
                     if getattr(self, k) is not None}
        return preset(self.arch, aux_channels=aux_channels, **overrides)

    def fit(self, X, y):
        """Train on frame features ``X`` paired with waveforms ``y``."""
        if len(X) != len(y) or not X:
            raise ShapeError("need equally many feature sets and waveforms")
        spec = self._spec(X[0].dim)
        self.params_ = build(spec, seed=self.seed, rate=self.rate)
        self.examples_ = [prepare_example(spec, w, f, self.rate) for f, w in zip(X, y)]
        fit_aux_stats(self.params_, [ex.aux for ex in self.examples_])
        self.loss_curve_ = train(self.params_, self.examples_, self.steps, self.lr,
                                 self.batch_samples, self.window, self.seed)
        return self

    def plan_for(self, features):
        check_is_fitted(self, "params_")
        aux = upsample_features(features)
        return aux, plan_from_f0(self.params_.spec, aux[:, 0], self.rate)

    def predict(self, X, seed=None):
        """Generate one waveform per :class:`FrameFeatures` in ``X``."""
        check_is_fitted(self, "params_")
        single = not isinstance(X, (list, tuple))
        items = [X] if single else X
        seed = self.seed if seed is None else seed
        waves = []
        for i, feats in enumerate(items):
            aux, plan = self.plan_for(feats)
            waves.append(generate(self.params_, aux, plan, seed + i, self.temperature)[1])
        return waves[0] if single else waves

    def score(self, X, y):
        """Negative mean cross-entropy (higher is better)."""
        check_is_fitted(self, "params_")
        examples = [prepare_example(self.params_.spec, w, f, self.rate) for f, w in zip(X, y)]
        return -evaluate_loss(self.params_, examples)


__all__ = [
    "GenerationState",
    "QPNetVocoder",
    "TrainingExample",
    "VocoderParams",
    "build",
    "build_plan",
    "count_parameters",
    "evaluate_loss",
    "fit_aux_stats",
    "generate",
    "load_vocoder",
    "prepare_example",
    "sample_windows",
    "save_vocoder",
    "teacher_forced_forward",
    "train",
    "train_step",
]
