"""Synthetic quasi-periodic speech corpus.

Each speaker is a fixed formant-like spectral envelope plus an F0 range.
Utterance ``u`` uses the same normalized F0 contour shape for every speaker,
so speaker pairs are frame-aligned parallel data.
"""

from dataclasses import dataclass

import numpy as np

from .codec import DEFAULT_HOP, DEFAULT_RATE, WaveBuffer
from .exceptions import InputRangeError

# (centre Hz, bandwidth Hz, relative gain) per formant
DEFAULT_FORMANTS = (
    ((600.0, 120.0, 1.0), (1200.0, 150.0, 0.5), (2500.0, 250.0, 0.25)),
    ((400.0, 100.0, 1.0), (1800.0, 200.0, 0.6), (3000.0, 300.0, 0.3)),
    ((800.0, 150.0, 1.0), (1500.0, 150.0, 0.3), (2800.0, 250.0, 0.35)),
    ((500.0, 120.0, 0.8), (1000.0, 120.0, 0.7), (2200.0, 250.0, 0.2)),
)


@dataclass(frozen=True)
class SpeakerProfile:
    name: str
    f0_min: float
    f0_max: float
    formants: tuple

    def __post_init__(self):
        if not 0 < self.f0_min < self.f0_max:
            raise InputRangeError(f"{self.name}: need 0 < f0_min < f0_max")
        if not self.formants:
            raise InputRangeError(f"{self.name}: at least one formant is required")

    def envelope(self, freq):
        """Linear amplitude of the spectral envelope at ``freq`` (Hz)."""
        freq = np.asarray(freq, dtype=np.float64)
        amp = np.full(freq.shape, 0.02)
        for centre, bw, gain in self.formants:
            amp += gain / (1.0 + ((freq - centre) / bw) ** 2)
        return amp


@dataclass(frozen=True)
class CorpusConfig:
    speakers: tuple
    utterances: int = 8
    duration: float = 1.0
    rate: int = DEFAULT_RATE
    hop: int = DEFAULT_HOP
    noise_level: float = 0.003
    max_harmonic_hz: float = 4000.0
    peak: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.utterances < 1 or self.duration <= 0:
            raise InputRangeError("need at least one utterance of positive duration")
        if self.noise_level < 0 or not 0 < self.peak <= 1:
            raise InputRangeError("noise_level must be >= 0 and peak in (0, 1]")
        for spk in self.speakers:
            if spk.f0_max * 2 >= self.rate / 2:
                raise InputRangeError(f"{spk.name}: F0 range too high for rate {self.rate}")


def default_speakers(ranges):
    """Speaker profiles ``spk0, spk1, ...`` for a list of ``(f0_min, f0_max)`` ranges."""
    return tuple(
        SpeakerProfile(f"spk{i}", lo, hi, DEFAULT_FORMANTS[i % len(DEFAULT_FORMANTS)])
        for i, (lo, hi) in enumerate(ranges)
    )


def contour_shape(n_samples, rate, rng, knot_spacing=0.12, step=0.1):
    """Smooth random walk in [0, 1] sampled per sample.

    Knots every ``knot_spacing`` seconds take Gaussian steps of std ``step``
    from a random start and are reflected into [0.05, 0.95]; the fixed step
    bounds the glide rate so frame-level F0 stays well defined.
    """
    n_knots = max(2, int(np.ceil(n_samples / rate / knot_spacing)) + 1)
    walk = rng.uniform(0.15, 0.85) + np.cumsum(np.r_[0.0, rng.normal(0.0, step, n_knots - 1)])
    lo, width = 0.05, 0.9
    folded = np.mod(walk - lo, 2 * width)
    walk = lo + np.where(folded > width, 2 * width - folded, folded)
    knots = np.linspace(0, n_samples - 1, n_knots)
    t = np.arange(n_samples)
    # cosine interpolation between knots keeps the contour smooth
    seg = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, n_knots - 2)
    frac = (t - knots[seg]) / (knots[seg + 1] - knots[seg])
    w = 0.5 - 0.5 * np.cos(np.pi * frac)
    return np.clip(walk[seg] * (1 - w) + walk[seg + 1] * w, 0.0, 1.0)


def synthesize(speaker, shape, rate, rng, noise_level=0.003, max_harmonic_hz=4000.0, peak=0.5):
    """Harmonic waveform for one speaker following a normalized contour shape.

    Returns:
        tuple: ``(WaveBuffer, f0_per_sample)``.
    """
    f0 = speaker.f0_min * (speaker.f0_max / speaker.f0_min) ** shape
    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    x = np.zeros_like(f0)
    n_harm = int(max_harmonic_hz // speaker.f0_min)
    for h in range(1, n_harm + 1):
        freq = h * f0
        amp = speaker.envelope(freq) * (freq < max_harmonic_hz)
        x += amp * np.sin(h * phase)
    x /= max(np.max(np.abs(x)), 1e-9)
    x += noise_level * rng.standard_normal(len(x))
    fade = min(len(x) // 4, int(0.01 * rate))
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    x *= peak / max(np.max(np.abs(x)), 1e-9)
    return WaveBuffer(x, rate), f0


def frame_f0(f0_per_sample, hop):
    """Ground-truth F0 at frame centres ``i * hop``."""
    n = len(f0_per_sample) // hop
    return f0_per_sample[np.arange(n) * hop]


def generate_corpus(config):
    """Yield ``(speaker_name, utterance_id, WaveBuffer, frame_f0)`` deterministically."""
    n = int(round(config.duration * config.rate))
    master = np.random.default_rng(config.seed)
    shape_seeds = master.integers(0, 2 ** 63, size=config.utterances)
    noise_seeds = master.integers(0, 2 ** 63, size=(len(config.speakers), config.utterances))
    for u in range(config.utterances):
        shape = contour_shape(n, config.rate, np.random.default_rng(shape_seeds[u]))
        for s, spk in enumerate(config.speakers):
            wave, f0 = synthesize(spk, shape, config.rate, np.random.default_rng(noise_seeds[s, u]),
                                  config.noise_level, config.max_harmonic_hz, config.peak)
            yield spk.name, f"utt{u:03d}", wave, frame_f0(f0, config.hop)
