"""Objective measures: mel-cepstral distortion and log-F0 RMSE, plus a run-level report."""

import math
from dataclasses import dataclass

import numpy as np

from .analysis import estimate_f0, melcep_extract
from .exceptions import QPNetError, ShapeError
from .validation import check_array

MCD_CONSTANT = 10.0 / math.log(10.0)
REPORT_HEADER = ("utterance", "frames", "mcd_db", "logf0_rmse", "voiced_overlap", "status")


def mcd(reference, test):
    """Mean mel-cepstral distortion in dB, excluding coefficient 0.

    Per frame: ``(10 / ln 10) * sqrt(2 * sum_{d >= 1} (c_d - c'_d)^2)``.

    Args:
        reference, test (np.ndarray): (T, M) mel-cepstra with equal shapes.
    """
    ref = check_array(reference, ndim=2, name="reference")
    tst = check_array(test, ndim=2, name="test")
    if ref.shape != tst.shape:
        raise ShapeError(f"mel-cepstra differ in shape: {ref.shape} vs {tst.shape}")
    diff = ref[:, 1:] - tst[:, 1:]
    return float(np.mean(MCD_CONSTANT * np.sqrt(2.0 * np.sum(diff * diff, axis=1))))


@dataclass(frozen=True)
class F0Error:
    """Log-F0 RMSE over frames voiced in both streams.

    ``rmse`` is ``None`` when no frame is voiced in both; ``overlap`` is the
    fraction of frames that are.
    """

    rmse: float
    overlap: float
    n_frames: int

    @property
    def empty(self):
        return self.rmse is None


def logf0_rmse(reference_f0, test_f0, reference_uv=None, test_uv=None):
    """Root-mean-square error of natural-log F0.

    Args:
        reference_f0, test_f0 (np.ndarray): per-frame F0 in Hz.
        reference_uv, test_uv (np.ndarray): optional voicing flags; by default
            a frame is voiced where its F0 is positive.

    Returns:
        F0Error
    """
    ref = check_array(reference_f0, ndim=1, name="reference_f0", allow_empty=True)
    tst = check_array(test_f0, ndim=1, name="test_f0", allow_empty=True)
    if ref.shape != tst.shape:
        raise ShapeError(f"F0 streams differ in length: {len(ref)} vs {len(tst)}")
    ref_v = ref > 0 if reference_uv is None else (np.asarray(reference_uv) > 0.5) & (ref > 0)
    tst_v = tst > 0 if test_uv is None else (np.asarray(test_uv) > 0.5) & (tst > 0)
    both = ref_v & tst_v
    n = len(ref)
    if not both.any():
        return F0Error(None, 0.0, n)
    err = np.log(ref[both]) - np.log(tst[both])
    return F0Error(float(np.sqrt(np.mean(err * err))), float(both.mean()), n)


def evaluate_pair(wave, features, max_frame_slack=0):
    """Re-analyse generated audio and compare it with its conditioning features.

    Frame counts must match; a caller may opt in to dropping up to
    ``max_frame_slack`` trailing frames from the longer side. Larger
    mismatches raise :class:`ShapeError`.

    Returns:
        dict: ``frames``, ``mcd_db``, ``logf0_rmse`` (None on empty overlap), ``voiced_overlap``.
    """
    hop = features.hop
    n_a, n_c = len(wave) // hop, len(features)
    if abs(n_a - n_c) > max_frame_slack:
        raise ShapeError(f"generated audio has {n_a} frames, conditioning has {n_c}")
    n = min(n_a, n_c)
    ref_f0 = np.where(features.uv[:n] > 0.5, features.continuous_f0[:n], 0.0)
    f0 = estimate_f0(wave, hop=hop, center=True)[:n]
    mcep = melcep_extract(wave, features.mcep_dim, hop, center=True)[:n]
    f0_err = logf0_rmse(ref_f0, f0)
    return {
        "frames": n,
        "mcd_db": mcd(features.mcep[:n], mcep),
        "logf0_rmse": f0_err.rmse,
        "voiced_overlap": f0_err.overlap,
    }


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def evaluate_run(pairs, report_path=None):
    """Score ``(name, wave, features)`` triples and optionally write a TSV report.

    ``wave`` and ``features`` may be loader callables; a failure on one pair
    becomes an error row and the run continues. The last row is the mean over
    successful pairs (RMSE averaged over pairs with a non-empty overlap).

    Returns:
        list: row dicts in report order, mean row last.
    """
    rows = []
    for name, wave, features in pairs:
        try:
            wave = wave() if callable(wave) else wave
            features = features() if callable(features) else features
            row = evaluate_pair(wave, features)
            row.update(utterance=name, status="ok")
        except (QPNetError, OSError, ValueError) as exc:
            row = {"utterance": name, "frames": None, "mcd_db": None, "logf0_rmse": None,
                   "voiced_overlap": None, "status": f"error: {exc}"}
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    rmses = [r["logf0_rmse"] for r in ok if r["logf0_rmse"] is not None]
    rows.append({
        "utterance": "MEAN",
        "frames": int(sum(r["frames"] for r in ok)) if ok else None,
        "mcd_db": float(np.mean([r["mcd_db"] for r in ok])) if ok else None,
        "logf0_rmse": float(np.mean(rmses)) if rmses else None,
        "voiced_overlap": float(np.mean([r["voiced_overlap"] for r in ok])) if ok else None,
        "status": f"{len(ok)}/{len(rows)} ok",
    })
    if report_path is not None:
        lines = ["\t".join(REPORT_HEADER)]
        lines += ["\t".join(_fmt(r[k]) for k in REPORT_HEADER) for r in rows]
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows
