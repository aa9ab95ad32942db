import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qpnet import metrics
from qpnet.codec import WaveBuffer
from qpnet.exceptions import ShapeError


def loop_mcd(a, b):
    total = 0.0
    for t in range(len(a)):
        s = 0.0
        for d in range(1, a.shape[1]):
            s += (a[t, d] - b[t, d]) ** 2
        total += 10.0 / math.log(10.0) * math.sqrt(2.0 * s)
    return total / len(a)


def loop_rmse(ref, tst):
    errs = [math.log(r) - math.log(t) for r, t in zip(ref, tst) if r > 0 and t > 0]
    return math.sqrt(sum(e * e for e in errs) / len(errs)) if errs else None


def test_single_frame_mcd_value():
    a = np.zeros((1, 5))
    b = a.copy()
    b[0, 3] = 1.0
    assert metrics.mcd(a, b) == pytest.approx(6.1418, abs=1e-3)
    assert metrics.mcd(a, a) == 0.0


@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 10 ** 6))
@settings(max_examples=40, deadline=None)
def test_mcd_loop_oracle_and_symmetry(T, M, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(T, M)), rng.normal(size=(T, M))
    assert metrics.mcd(a, b) == pytest.approx(loop_mcd(a, b), abs=1e-10)
    assert metrics.mcd(a, b) == metrics.mcd(b, a)
    c = b.copy()
    c[:, 0] += rng.normal(size=T)
    assert metrics.mcd(a, c) == pytest.approx(metrics.mcd(a, b), abs=1e-12)


def test_mcd_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.mcd(np.zeros((3, 4)), np.zeros((4, 4)))


voicing = st.floats(50, 400) | st.just(0.0)


@given(arrays(np.float64, st.integers(1, 30), elements=voicing), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_rmse_loop_oracle_and_symmetry(ref, seed):
    rng = np.random.default_rng(seed)
    tst = np.where(rng.random(len(ref)) < 0.3, 0.0, rng.uniform(50, 400, len(ref)))
    got = metrics.logf0_rmse(ref, tst)
    want = loop_rmse(ref, tst)
    if want is None:
        assert got.empty and got.overlap == 0.0
    else:
        assert got.rmse == pytest.approx(want, abs=1e-10)
        assert metrics.logf0_rmse(tst, ref).rmse == got.rmse
        assert got.overlap == pytest.approx(np.mean((ref > 0) & (tst > 0)))


def test_rmse_examples():
    ref = np.array([100.0, 0.0, 150.0, 220.0])
    assert metrics.logf0_rmse(ref, ref).rmse == 0.0
    assert metrics.logf0_rmse(ref, ref * np.exp(0.1)).rmse == pytest.approx(0.1, abs=1e-12)
    disjoint = metrics.logf0_rmse(np.array([100.0, 0.0]), np.array([0.0, 100.0]))
    assert disjoint.empty and disjoint.rmse is None and disjoint.n_frames == 2


def test_rmse_uv_flags_override():
    ref = np.array([100.0, 120.0, 130.0])
    err = metrics.logf0_rmse(ref, ref * 2, reference_uv=np.array([1, 0, 1]))
    assert err.overlap == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        metrics.logf0_rmse(ref, ref[:2])


def test_self_comparison_is_zero(tiny_corpus):
    _, _, wave, _, feats = tiny_corpus[0]
    row = metrics.evaluate_pair(wave, feats)
    assert row["mcd_db"] == 0.0 and row["logf0_rmse"] == 0.0
    assert row["frames"] == len(feats)


def test_frame_slack_and_rejection(tiny_corpus):
    _, _, wave, _, feats = tiny_corpus[0]
    shorter = WaveBuffer(wave.samples[: len(wave) - feats.hop], wave.rate)
    with pytest.raises(ShapeError):
        metrics.evaluate_pair(shorter, feats)
    assert metrics.evaluate_pair(shorter, feats, max_frame_slack=1)["frames"] == len(feats) - 1
    much_shorter = WaveBuffer(wave.samples[: len(wave) - 3 * feats.hop], wave.rate)
    with pytest.raises(ShapeError):
        metrics.evaluate_pair(much_shorter, feats, max_frame_slack=1)


def test_silent_audio_gives_empty_overlap(tiny_corpus):
    _, _, wave, _, feats = tiny_corpus[0]
    row = metrics.evaluate_pair(WaveBuffer(np.zeros(len(wave)), wave.rate), feats)
    assert row["logf0_rmse"] is None and row["voiced_overlap"] == 0.0


def test_evaluate_run_report(tmp_path, tiny_corpus):
    pairs = [(f"{spk}_{utt}", wave, feats) for spk, utt, wave, _, feats in tiny_corpus[:3]]

    def missing():
        raise FileNotFoundError("nope.wav")

    pairs.append(("broken", missing, tiny_corpus[0][4]))
    path = tmp_path / "report.tsv"
    rows = metrics.evaluate_run(pairs, path)
    assert len(rows) == len(pairs) + 1
    assert rows[3]["status"].startswith("error") and rows[-1]["status"] == "3/4 ok"
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t") == list(metrics.REPORT_HEADER)
    assert len(lines) == len(pairs) + 2
    assert lines[4].split("\t")[2] == "NA"
    assert lines[-1].startswith("MEAN\t")
    assert rows[-1]["mcd_db"] == 0.0
