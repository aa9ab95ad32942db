"""Lightweight speech analyzers: autocorrelation F0, log-mel cepstrum, coded aperiodicity.

The same analyzers produce the vocoder conditioning features and re-analyze
generated audio for the objective metrics, so both sides of every comparison
go through identical code.
"""

import numpy as np
from scipy.fft import dct, irfft, next_fast_len, rfft
from sklearn.base import BaseEstimator, TransformerMixin

from .codec import DEFAULT_HOP, DEFAULT_MCEP_DIM, FrameFeatures, WaveBuffer, interpolate_continuous_f0
from .exceptions import InputRangeError
from .validation import check_positive_int

DEFAULT_FMIN = 70.0
DEFAULT_FMAX = 400.0
VOICING_THRESHOLD = 0.45
OCTAVE_RATIO = 0.9
MCEP_WINDOW = 256
MCEP_NFFT = 2048
SPECTRUM_FLOOR = 1e-8
AP_FLOOR_DB = -60.0


def f0_window_length(rate, fmin, periods=4.0):
    """Analysis window spanning ``periods`` cycles of ``fmin``."""
    return int(np.ceil(periods * rate / fmin))


def frame_signal(x, window, hop, center=False):
    """Slice ``x`` into overlapping frames.

    Frame ``i`` covers ``x[i*hop : i*hop + window]``; with ``center`` the signal
    is zero-padded by ``window // 2`` on both sides first so frame ``i`` is
    centred on sample ``i*hop``. The frame count is
    ``floor((len - window) / hop) + 1`` of the (padded) signal.
    """
    x = np.asarray(x, dtype=np.float64)
    window = check_positive_int(window, "window")
    hop = check_positive_int(hop, "hop")
    if center:
        pad = window // 2
        x = np.pad(x, (pad, pad))
    if len(x) < window:
        raise InputRangeError(f"analysis window ({window}) longer than signal ({len(x)})")
    n_frames = (len(x) - window) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]


def normalized_autocorrelation(frames, max_lag):
    """Energy-normalized autocorrelation of each frame for lags ``0..max_lag``.

    ``r(tau) = sum x[n] x[n+tau] / sqrt(sum_head x^2 * sum_tail x^2)`` where the
    sums run over the overlapping part of the frame and its shifted copy.
    Frames with zero energy get an all-zero row.
    """
    frames = np.asarray(frames, dtype=np.float64)
    width = frames.shape[1]
    if max_lag >= width:
        raise InputRangeError(f"max lag {max_lag} needs a window longer than {width}")
    nfft = next_fast_len(2 * width)
    spec = rfft(frames, nfft, axis=1)
    acf = irfft(spec.real ** 2 + spec.imag ** 2, nfft, axis=1)[:, : max_lag + 1]
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, width - lags]
    tail = csum[:, [width]] - csum[:, lags]
    denom = np.sqrt(head * tail)
    scale = np.maximum(csum[:, [width]], 1e-300)
    valid = denom > 1e-12 * scale
    out = np.zeros_like(acf)
    np.divide(acf, denom, out=out, where=valid)
    return out


def _lag_bounds(rate, fmin, fmax):
    if not 0 < fmin < fmax < rate / 2:
        raise InputRangeError(f"need 0 < fmin < fmax < rate/2, got fmin={fmin} fmax={fmax}")
    return max(int(np.floor(rate / fmax)), 2), int(np.ceil(rate / fmin))


def _pick_period(nac, lo, hi, octave_ratio=OCTAVE_RATIO):
    """Return (fractional lag, peak value) per frame from a normalized ACF."""
    seg = nac[:, lo - 1 : hi + 2]
    mid = seg[:, 1:-1]
    is_peak = (mid >= seg[:, :-2]) & (mid >= seg[:, 2:])
    peak_vals = np.where(is_peak, mid, -np.inf)
    best = np.max(peak_vals, axis=1)
    # smallest-lag peak within octave_ratio of the best guards against sub-octave picks
    candidate = is_peak & (mid >= octave_ratio * best[:, None]) & np.isfinite(best)[:, None]
    idx = np.argmax(candidate, axis=1)
    rows = np.arange(len(nac))
    a, b, c = seg[rows, idx], seg[rows, idx + 1], seg[rows, idx + 2]
    curv = a - 2.0 * b + c
    delta = np.zeros_like(b)
    np.divide(0.5 * (a - c), curv, out=delta, where=np.abs(curv) > 1e-12)
    delta = np.clip(delta, -0.5, 0.5)
    lag = lo + idx + delta
    has_peak = np.any(candidate, axis=1)
    return lag, np.where(has_peak, b, 0.0), has_peak


def estimate_f0(wave, fmin=DEFAULT_FMIN, fmax=DEFAULT_FMAX, hop=DEFAULT_HOP,
                threshold=VOICING_THRESHOLD, window=None, center=False):
    """Frame-wise F0 by normalized autocorrelation.

    Args:
        wave (WaveBuffer): input signal.
        fmin, fmax (float): search range in Hz.
        hop (int): frame shift in samples.
        threshold (float): minimum normalized peak for a voiced decision.
        window (int): analysis length; defaults to four periods of ``fmin``.
        center (bool): centre frames on ``i * hop``.

    Returns:
        np.ndarray: per-frame F0 in Hz, 0 on unvoiced frames.
    """
    rate = wave.rate
    lo, hi = _lag_bounds(rate, fmin, fmax)
    if window is None:
        window = f0_window_length(rate, fmin)
    if window < 2 * rate / fmin:
        raise InputRangeError("F0 window must cover at least two periods of fmin")
    frames = frame_signal(wave.samples, window, hop, center)
    frames = frames - frames.mean(axis=1, keepdims=True)
    nac = normalized_autocorrelation(frames, hi + 1)
    lag, peak, has_peak = _pick_period(nac, lo, hi)
    voiced = has_peak & (peak >= threshold)
    return np.where(voiced, rate / lag, 0.0)


def mel_filterbank(rate, n_fft, n_filters):
    """Triangular filters evenly spaced on the HTK mel scale from 0 to rate/2."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_filters + 2))
    freqs = np.linspace(0.0, rate / 2.0, n_fft // 2 + 1)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def melcep_extract(wave, order=DEFAULT_MCEP_DIM, hop=DEFAULT_HOP, window=MCEP_WINDOW,
                   n_fft=MCEP_NFFT, n_filters=None, center=False):
    """Log-mel cepstrum: Hann window, mel filterbank, floored log, orthonormal DCT-II.

    Coefficient 0 carries the frame energy. ``n_filters`` defaults to
    ``2 * order``; the floor is ``1e-8`` times the frame's largest band energy.

    Returns:
        np.ndarray: (n_frames, order) coefficients.
    """
    if order < 2:
        raise InputRangeError("mel-cepstrum order must be at least 2")
    n_filters = 2 * order if n_filters is None else n_filters
    if n_filters < order:
        raise InputRangeError("need at least `order` mel filters")
    if n_fft < window:
        raise InputRangeError("n_fft must be at least the window length")
    frames = frame_signal(wave.samples, window, hop, center)
    spec = np.abs(rfft(frames * np.hanning(window), n_fft, axis=1)) ** 2
    energies = spec @ mel_filterbank(wave.rate, n_fft, n_filters).T
    floor = np.maximum(SPECTRUM_FLOOR * energies.max(axis=1, keepdims=True), 1e-300)
    log_e = np.log(np.maximum(energies, floor))
    return dct(log_e, type=2, norm="ortho", axis=1)[:, :order]


def code_aperiodicity(wave, hop=DEFAULT_HOP, fmin=DEFAULT_FMIN, fmax=DEFAULT_FMAX,
                      window=None, center=False):
    """Two-band aperiodicity code in [-1, 0].

    Each frame is predicted from its own past one pitch period earlier with a
    three-tap least-squares predictor. The residual-to-signal energy ratio is
    measured below and above ``rate / 4``, converted to dB, clamped to
    [-60, 0] and divided by 60. Silent bands read as the floor (-1).
    """
    rate = wave.rate
    lo, hi = _lag_bounds(rate, fmin, fmax)
    if window is None:
        window = f0_window_length(rate, fmin)
    frames = frame_signal(wave.samples, window, hop, center)
    frames = frames - frames.mean(axis=1, keepdims=True)
    nac = normalized_autocorrelation(frames, hi + 1)
    lag, _, _ = _pick_period(nac, lo, hi)
    period = np.clip(np.round(lag).astype(int), lo, hi)

    n_fft = next_fast_len(window)
    split_bin = int(round((n_fft // 2) * 0.5))
    out = np.full((len(frames), 2), -1.0)
    for i, (x, p) in enumerate(zip(frames, period)):
        start = p + 1
        target = x[start:]
        past = np.stack([x[start - off : len(x) - off] for off in (p - 1, p, p + 1)], axis=1)
        gram = past.T @ past
        if np.trace(gram) <= 0:
            continue
        coef = np.linalg.lstsq(gram, past.T @ target, rcond=None)[0]
        resid = target - past @ coef
        ps = np.abs(rfft(target, n_fft)) ** 2
        pr = np.abs(rfft(resid, n_fft)) ** 2
        for band, sl in enumerate((slice(0, split_bin), slice(split_bin, None))):
            total = ps[sl].sum()
            if total <= 1e-300:
                continue
            ratio = min(pr[sl].sum() / total, 1.0)
            db = 10.0 * np.log10(max(ratio, 1e-30))
            out[i, band] = max(db, AP_FLOOR_DB) / -AP_FLOOR_DB
    return out


def extract_features(wave, hop=DEFAULT_HOP, order=DEFAULT_MCEP_DIM, fmin=DEFAULT_FMIN,
                     fmax=DEFAULT_FMAX, threshold=VOICING_THRESHOLD):
    """Full conditioning-feature extraction for one utterance.

    Frames are centred on multiples of ``hop`` and truncated to
    ``len(wave) // hop`` so that upsampling recovers exactly the first
    ``n_frames * hop`` samples.

    Returns:
        FrameFeatures: continuous F0, uv, mcep and coded aperiodicity. The raw
        F0 (zeros on unvoiced frames) is kept under ``extra["f0"]``.
    """
    n_frames = len(wave) // hop
    if n_frames < 1:
        raise InputRangeError("waveform shorter than one hop")
    f0 = estimate_f0(wave, fmin, fmax, hop, threshold, center=True)[:n_frames]
    mcep = melcep_extract(wave, order, hop, center=True)[:n_frames]
    ap = code_aperiodicity(wave, hop, fmin, fmax, center=True)[:n_frames]
    cont, uv = interpolate_continuous_f0(f0)
    return FrameFeatures(cont, uv, mcep, ap, hop, extra={"f0": f0})


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping a list of :class:`WaveBuffer` to :class:`FrameFeatures`."""

    def __init__(self, hop=DEFAULT_HOP, order=DEFAULT_MCEP_DIM, fmin=DEFAULT_FMIN,
                 fmax=DEFAULT_FMAX, threshold=VOICING_THRESHOLD):
        self.hop = hop
        self.order = order
        self.fmin = fmin
        self.fmax = fmax
        self.threshold = threshold

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if isinstance(X, WaveBuffer):
            X = [X]
        return [extract_features(w, self.hop, self.order, self.fmin, self.fmax, self.threshold)
                for w in X]
