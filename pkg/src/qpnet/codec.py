"""Waveform containers, mu-law companding, F0 interpolation and feature I/O."""

import struct
import wave
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import FormatError, InputRangeError, ShapeError
from .validation import check_array, check_positive_int

DEFAULT_RATE = 22050
DEFAULT_HOP = 110
DEFAULT_MCEP_DIM = 34
N_CODES = 256

FEATURE_MAGIC = b"QPF1"


@dataclass(frozen=True)
class WaveBuffer:
    """Mono waveform with amplitudes in [-1, 1].

    Attributes:
        samples (np.ndarray): float64 samples.
        rate (int): sampling rate in Hz.
    """

    samples: np.ndarray
    rate: int = DEFAULT_RATE

    def __post_init__(self):
        samples = check_array(self.samples, ndim=1, name="samples", allow_empty=True)
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise InputRangeError("waveform samples must lie in [-1, 1]")
        check_positive_int(self.rate, "rate")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.rate


@dataclass(frozen=True)
class FrameFeatures:
    """Per-frame auxiliary features in the fixed column layout.

    Columns of :meth:`as_matrix` are ``[continuous_f0, uv, mcep(0..M-1), coded_ap(0..1)]``.
    """

    continuous_f0: np.ndarray
    uv: np.ndarray
    mcep: np.ndarray
    coded_ap: np.ndarray
    hop: int = DEFAULT_HOP
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        f0 = check_array(self.continuous_f0, ndim=1, name="continuous_f0")
        uv = check_array(self.uv, ndim=1, name="uv")
        mcep = check_array(self.mcep, ndim=2, name="mcep")
        ap = check_array(self.coded_ap, ndim=2, name="coded_ap")
        n = len(f0)
        if not (len(uv) == len(mcep) == len(ap) == n):
            raise ShapeError(
                f"frame streams differ in length: f0={n} uv={len(uv)} "
                f"mcep={len(mcep)} ap={len(ap)}"
            )
        if np.any(f0 <= 0):
            raise InputRangeError("continuous_f0 must be strictly positive")
        if not np.all((uv == 0) | (uv == 1)):
            raise InputRangeError("uv must be 0 or 1")
        if ap.shape[1] != 2:
            raise ShapeError(f"coded_ap must have 2 columns, got {ap.shape[1]}")
        check_positive_int(self.hop, "hop")
        object.__setattr__(self, "continuous_f0", f0)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "mcep", mcep)
        object.__setattr__(self, "coded_ap", ap)

    def __len__(self):
        return len(self.continuous_f0)

    @property
    def mcep_dim(self):
        return self.mcep.shape[1]

    @property
    def dim(self):
        return 2 + self.mcep_dim + 2

    def as_matrix(self):
        return np.column_stack([self.continuous_f0, self.uv, self.mcep, self.coded_ap])

    @classmethod
    def from_matrix(cls, matrix, hop):
        matrix = check_array(matrix, ndim=2, name="feature matrix")
        if matrix.shape[1] < 5:
            raise ShapeError("feature matrix needs at least 5 columns")
        return cls(matrix[:, 0], matrix[:, 1], matrix[:, 2:-2], matrix[:, -2:], hop)

    def replace(self, **changes):
        values = dict(continuous_f0=self.continuous_f0, uv=self.uv, mcep=self.mcep,
                      coded_ap=self.coded_ap, hop=self.hop)
        values.update(changes)
        return FrameFeatures(**values)


def _samples(wave_or_array):
    if isinstance(wave_or_array, WaveBuffer):
        return wave_or_array.samples
    return check_array(wave_or_array, ndim=1, name="samples", allow_empty=True)


def compand(x, mu=255):
    """Mu-law companding F(x) = sign(x) ln(1 + mu|x|) / ln(1 + mu)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def expand(y, mu=255):
    """Inverse companding F^-1(y)."""
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


def mulaw_encode(wave, mu=255):
    """Quantize a waveform to mu-law codes.

    Args:
        wave (WaveBuffer or array-like): samples in [-1, 1].
        mu (int): companding constant; 255 gives 8-bit codes.

    Returns:
        np.ndarray: int64 codes in ``[0, mu]``, same length as the input.
    """
    x = _samples(wave)
    if x.size and np.max(np.abs(x)) > 1.0:
        raise InputRangeError("mu-law input must lie in [-1, 1]")
    levels = mu + 1
    codes = np.floor((compand(x, mu) + 1.0) / 2.0 * levels)
    return np.clip(codes, 0, levels - 1).astype(np.int64)


def mulaw_decode(codes, mu=255, rate=DEFAULT_RATE):
    """Map codes back to amplitudes at their bin centres."""
    codes = np.asarray(codes)
    levels = mu + 1
    if codes.size and (codes.min() < 0 or codes.max() >= levels):
        raise InputRangeError(f"mu-law codes must lie in [0, {levels - 1}]")
    y = (codes.astype(np.float64) + 0.5) / levels * 2.0 - 1.0
    return WaveBuffer(np.clip(expand(y, mu), -1.0, 1.0), rate)


class MuLawQuantizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`mulaw_encode` / :func:`mulaw_decode`."""

    def __init__(self, mu=255):
        self.mu = mu

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return mulaw_encode(X, self.mu)

    def inverse_transform(self, X):
        return mulaw_decode(X, self.mu).samples


def interpolate_continuous_f0(f0):
    """Fill unvoiced gaps of an F0 contour.

    Gaps between voiced frames are filled linearly in log-Hz; leading and
    trailing unvoiced runs take the nearest voiced value.

    Args:
        f0 (array-like): per-frame F0 in Hz, 0 marking unvoiced frames.

    Returns:
        tuple: ``(continuous_f0, uv)`` as float64 arrays.
    """
    f0 = check_array(f0, ndim=1, name="f0")
    if np.any(f0 < 0):
        raise InputRangeError("F0 values must be non-negative")
    uv = (f0 > 0).astype(np.float64)
    voiced = np.flatnonzero(uv)
    if voiced.size == 0:
        raise InputRangeError("cannot interpolate an all-unvoiced F0 contour")
    frames = np.arange(len(f0))
    # np.interp holds the end values constant outside the voiced span
    log_f0 = np.interp(frames, voiced, np.log(f0[voiced]))
    cont = np.exp(log_f0)
    cont[voiced] = f0[voiced]
    cont[: voiced[0]] = f0[voiced[0]]
    cont[voiced[-1] + 1 :] = f0[voiced[-1]]
    return cont, uv


def upsample_features(frames, hop=None):
    """Repeat every frame row ``hop`` times (nearest-neighbour hold).

    Args:
        frames (FrameFeatures or array-like): frame matrix of shape (N, D).
        hop (int): samples per frame; taken from ``frames.hop`` when omitted.

    Returns:
        np.ndarray: (N * hop, D) per-sample auxiliary matrix.
    """
    if isinstance(frames, FrameFeatures):
        hop = frames.hop if hop is None else hop
        matrix = frames.as_matrix()
    else:
        matrix = check_array(frames, ndim=2, name="frames", allow_empty=True)
    if hop is None:
        raise InputRangeError("hop must be given for a raw frame matrix")
    hop = check_positive_int(hop, "hop")
    if len(matrix) == 0:
        raise ShapeError("cannot upsample an empty frame sequence")
    return np.repeat(matrix, hop, axis=0)


def read_wav(path):
    """Read a 16-bit PCM mono WAV file into a :class:`WaveBuffer`."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit mono PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return WaveBuffer(pcm / 32768.0, rate)


def write_wav(path, wave_buffer):
    """Write a :class:`WaveBuffer` as 16-bit PCM mono."""
    pcm = np.clip(np.round(wave_buffer.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(wave_buffer.rate))
        fh.writeframes(pcm.tobytes())


def write_features(path, features):
    """Serialize :class:`FrameFeatures` to the ``QPF1`` binary layout."""
    matrix = features.as_matrix().astype("<f4")
    header = FEATURE_MAGIC + struct.pack("<III", len(features), features.hop, features.mcep_dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.tobytes(order="C"))


def read_features(path):
    """Load a ``QPF1`` feature file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    n_frames, hop, mcep_dim = struct.unpack("<III", blob[4:16])
    width = 2 + mcep_dim + 2
    expected = 16 + 4 * n_frames * width
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    matrix = np.frombuffer(blob[16:], dtype="<f4").reshape(n_frames, width)
    return FrameFeatures.from_matrix(matrix.astype(np.float64), hop)
