"""Architecture descriptors, pitch-dependent dilation factors and dilation plans."""

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .exceptions import InputRangeError, ShapeError
from .validation import check_array


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer counts and channel sizes of a WaveNet / QPNet vocoder.

    ``adaptive_layers = 0`` describes a vanilla WaveNet. ``fixed_first``
    selects the cascade order of the fixed and pitch-adaptive modules.
    """

    fixed_layers: int = 3
    fixed_repeats: int = 1
    adaptive_layers: int = 2
    adaptive_repeats: int = 1
    residual_channels: int = 64
    skip_channels: int = 64
    head_channels: int = 64
    aux_channels: int = 38
    quant_levels: int = 256
    a: int = 8
    fixed_first: bool = True

    def __post_init__(self):
        counts = (self.fixed_layers, self.fixed_repeats, self.adaptive_layers, self.adaptive_repeats)
        if any(int(c) != c or c < 0 for c in counts):
            raise InputRangeError(f"layer counts must be non-negative integers, got {counts}")
        if self.fixed_layers * self.fixed_repeats < 1:
            raise InputRangeError("at least one fixed layer is required")
        if self.adaptive_layers > 0 and self.adaptive_repeats < 1:
            raise InputRangeError("adaptive_layers > 0 needs adaptive_repeats >= 1")
        for name in ("residual_channels", "skip_channels", "head_channels", "aux_channels"):
            if getattr(self, name) < 1:
                raise InputRangeError(f"{name} must be positive")
        if self.quant_levels != 256:
            raise InputRangeError("only 8-bit mu-law output (256 levels) is supported")
        if self.a < 1:
            raise InputRangeError("dilation constant a must be >= 1")

    @property
    def is_adaptive(self):
        return self.adaptive_layers > 0 and self.adaptive_repeats > 0

    @property
    def n_fixed(self):
        return self.fixed_layers * self.fixed_repeats

    @property
    def n_adaptive(self):
        return self.adaptive_layers * self.adaptive_repeats if self.is_adaptive else 0

    def fixed_dilations(self):
        return [2 ** (k % self.fixed_layers) for k in range(self.n_fixed)]

    def adaptive_multipliers(self):
        return [2 ** (k % self.adaptive_layers) for k in range(self.n_adaptive)]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def with_aux(self, aux_channels):
        return replace(self, aux_channels=aux_channels)


def preset(name, **overrides):
    """Named architectures.

    ``wnf``, ``wnc`` and ``qpnet`` follow the full-size table settings (512
    residual channels, 256 skip/head channels); ``desk-qpnet`` and
    ``desk-wn`` are the 64-channel desk configurations, where ``desk-wn``
    has the same number of layers as ``desk-qpnet`` but only fixed dilations.
    """
    full = dict(residual_channels=512, skip_channels=256, head_channels=256)
    table = {
        "wnf": dict(fixed_layers=10, fixed_repeats=3, adaptive_layers=0, adaptive_repeats=0, **full),
        "wnc": dict(fixed_layers=4, fixed_repeats=4, adaptive_layers=0, adaptive_repeats=0, **full),
        "qpnet": dict(fixed_layers=4, fixed_repeats=3, adaptive_layers=4, adaptive_repeats=1, a=8, **full),
        "desk-qpnet": dict(fixed_layers=3, fixed_repeats=1, adaptive_layers=2, adaptive_repeats=1),
        "desk-wn": dict(fixed_layers=5, fixed_repeats=1, adaptive_layers=0, adaptive_repeats=0),
    }
    if name not in table:
        raise InputRangeError(f"unknown architecture {name!r}; choose from {sorted(table)}")
    params = table[name]
    params.update(overrides)
    return ArchitectureSpec(**params)


def pitch_dilation_factors(f0, rate, a=8):
    """Per-sample dilation factor ``rate / (f0 * a)``.

    Args:
        f0 (array-like): continuous F0 per sample, strictly positive.
        rate (float): sampling rate in Hz.
        a (int): samples per pitch cycle seen by the network.
    """
    f0 = check_array(f0, ndim=(0, 1), name="f0", allow_empty=True)
    if np.any(f0 <= 0):
        raise InputRangeError("F0 must be strictly positive; interpolate unvoiced frames first")
    if a < 1:
        raise InputRangeError("a must be >= 1")
    return rate / (f0 * a)


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class DilationPlan:
    """Per-layer dilations for one sequence.

    Attributes:
        fixed_dilations (tuple): one integer per fixed layer.
        adaptive_base (tuple): per-layer multipliers ``2 ** (k mod adaptive_layers)``.
        e_t (np.ndarray): per-sample dilation factors (empty for vanilla WN).
        adaptive_dilations (np.ndarray): int64 array of shape (T, n_adaptive).
    """

    fixed_dilations: tuple
    adaptive_base: tuple
    e_t: np.ndarray
    adaptive_dilations: np.ndarray

    @property
    def n_adaptive(self):
        return len(self.adaptive_base)

    @property
    def length(self):
        return len(self.e_t) if self.n_adaptive else None

    def layer_dilations(self, fixed_first=True):
        """List of per-layer dilations in network order.

        Fixed layers yield ints, adaptive layers yield per-sample int arrays.
        """
        fixed = list(self.fixed_dilations)
        adaptive = [self.adaptive_dilations[:, k] for k in range(self.n_adaptive)]
        return fixed + adaptive if fixed_first else adaptive + fixed

    def max_dilations(self):
        fixed = list(self.fixed_dilations)
        if self.n_adaptive == 0 or len(self.adaptive_dilations) == 0:
            return fixed + [1] * self.n_adaptive
        return fixed + [int(v) for v in self.adaptive_dilations.max(axis=0)]

    def window(self, start, stop):
        """Sub-plan for samples ``[start, stop)``."""
        if self.n_adaptive == 0:
            return self
        return DilationPlan(self.fixed_dilations, self.adaptive_base,
                            self.e_t[start:stop], self.adaptive_dilations[start:stop])


def build_plan(spec, e_t=None):
    """Dilation plan for ``spec`` given per-sample factors ``e_t``.

    Fixed dilations double per layer and repeat; adaptive dilations are
    ``max(1, round_half_up(e_t * 2 ** (k mod adaptive_layers)))``.
    """
    fixed = tuple(spec.fixed_dilations())
    base = tuple(spec.adaptive_multipliers())
    if not base:
        return DilationPlan(fixed, (), np.zeros(0), np.zeros((0, 0), dtype=np.int64))
    if e_t is None:
        raise ShapeError("an adaptive plan needs per-sample dilation factors")
    e_t = check_array(e_t, ndim=1, name="e_t")
    if np.any(e_t <= 0):
        raise InputRangeError("dilation factors must be positive")
    dil = np.maximum(1, round_half_up(e_t[:, None] * np.asarray(base, dtype=np.float64)[None, :]))
    return DilationPlan(fixed, base, e_t, dil.astype(np.int64))


def plan_from_f0(spec, f0_per_sample, rate):
    """Convenience wrapper: dilation factors from upsampled F0, then :func:`build_plan`."""
    if not spec.is_adaptive:
        return build_plan(spec)
    return build_plan(spec, pitch_dilation_factors(f0_per_sample, rate, spec.a))


def receptive_field(spec, e_const=None):
    """Number of past input steps an output depends on.

    One step for the kernel-2 causal entry layer plus the sum of all layer
    dilations, with adaptive layers evaluated at a constant factor ``e_const``.
    """
    r = 1 + sum(spec.fixed_dilations())
    if spec.is_adaptive:
        if e_const is None:
            raise InputRangeError("e_const is required for an adaptive architecture")
        plan = build_plan(spec, np.array([float(e_const)]))
        r += int(plan.adaptive_dilations[0].sum())
    elif e_const is not None:
        raise InputRangeError("e_const is only meaningful for adaptive architectures")
    return r


def format_plan_report(spec, plan, rate=None):
    """Human-readable per-layer dilation summary."""
    lines = [f"architecture: {spec.to_json()}"]
    order = ("fixed", "adaptive") if spec.fixed_first else ("adaptive", "fixed")
    lines.append(f"cascade order: {' -> '.join(order)}")
    for k, d in enumerate(plan.fixed_dilations):
        lines.append(f"fixed[{k}]\tdilation={d}")
    for k, base in enumerate(plan.adaptive_base):
        col = plan.adaptive_dilations[:, k]
        if len(col):
            lines.append(
                f"adaptive[{k}]\tx{base}\tmin={col.min()}\tmax={col.max()}\tmean={col.mean():.2f}"
            )
        else:
            lines.append(f"adaptive[{k}]\tx{base}\t(empty)")
    span_fixed = 1 + sum(plan.fixed_dilations)
    lines.append(f"fixed span (incl. causal layer): {span_fixed}")
    if plan.n_adaptive and len(plan.e_t):
        total = span_fixed + plan.adaptive_dilations.sum(axis=1)
        lines.append(f"e_t: min={plan.e_t.min():.3f} max={plan.e_t.max():.3f}")
        lines.append(f"total span: min={total.min()} max={total.max()} mean={total.mean():.1f}")
    if rate:
        lines.append(f"rate: {rate}")
    return "\n".join(lines) + "\n"
