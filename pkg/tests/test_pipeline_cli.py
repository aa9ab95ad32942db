import json
import os

import numpy as np
import pytest

from qpnet import cli, codec, metrics, pipeline

TINY = """\
# tiny run used by the integration tests
speaker_ranges = 120-240,150-300
utterances = 3
train_utterances = 2
duration = 0.3
residual_channels = 8
skip_channels = 8
head_channels = 8
steps = 3
batch_samples = 512
window = 256
adapt_iterations = 2
adapt_eval_every = 1
conv_hidden = 8
conv_epochs = 3
gen_max_frames = 6
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(TINY + extra, encoding="utf-8")
    return str(path)


def run(tmp_path, name, *args, extra=""):
    run_dir = tmp_path / name
    code = cli.main([*args, "--config", write_config(tmp_path, extra), "--run-dir", str(run_dir)])
    return code, run_dir


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            full = os.path.join(dirpath, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    code, run_dir = run(tmp, "a", "run")
    assert code == 0
    return tmp, run_dir


def test_full_pipeline_emits_report(full_run):
    _, run_dir = full_run
    lines = (run_dir / "reports" / "evaluation.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t") == list(metrics.REPORT_HEADER)
    assert len(lines) == 1 + 1 + 1  # header, one eval utterance, mean row
    for name in ("vocoder_si.qpw", "vocoder_sd.qpw", "converter.qpw", "adapt_sda_loss.tsv"):
        assert (run_dir / "models" / name).exists()
    ledger = (run_dir / "models" / "adapt_sda_loss.tsv").read_text().splitlines()
    assert [row.split("\t")[0] for row in ledger] == ["0", "1", "2"]
    codes = (run_dir / "generated" / "utt002.codes").read_bytes()
    assert len(codes) == 6 * 110
    assert (run_dir / "config.resolved").exists()


def test_manifest_hashes_match(full_run):
    _, run_dir = full_run
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert list(manifest["stages"]) == sorted(pipeline.STAGES)
    for entry in manifest["stages"].values():
        for rel, digest in entry["outputs"].items():
            assert pipeline.sha256_file(run_dir / rel) == digest
    assert manifest["stages"]["train-vocoder"]["seed"] == 0


def test_rerun_is_byte_identical(full_run):
    tmp, run_dir = full_run
    code, other = run(tmp, "b", "run")
    assert code == 0
    assert tree_bytes(run_dir) == tree_bytes(other)


def test_sidecar_matches_corpus(full_run):
    _, run_dir = full_run
    f0 = np.loadtxt(run_dir / "corpus" / "spk0" / "utt000.f0")
    wave = codec.read_wav(run_dir / "corpus" / "spk0" / "utt000.wav")
    assert len(f0) == len(wave) // 110 and np.all((f0 >= 120) & (f0 <= 240))


def test_stage_order_errors(tmp_path):
    code, _ = run(tmp_path, "empty", "adapt")
    assert code == cli.STAGE_BASE["adapt"] + 1
    code, _ = run(tmp_path, "empty", "extract")
    assert code == cli.STAGE_BASE["extract"] + 1


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["show-config", "--set", "no_such_key=1"]) == 2
    assert cli.main(["show-config", "--set", "steps=many"]) == 2
    assert cli.main(["show-config", "--config", str(tmp_path / "missing.cfg")]) == 2
    code, _ = run(tmp_path, "x", "synth-corpus", extra="speaker_ranges = 120:240\n")
    assert code == 2
    capsys.readouterr()
    assert cli.main(["show-config", "--set", "steps=7"]) == 0
    assert "steps = 7" in capsys.readouterr().out


def test_invalid_range_maps_to_stage_code(tmp_path):
    code, _ = run(tmp_path, "x", "synth-corpus", extra="speaker_ranges = 240-120\n")
    assert code == cli.STAGE_BASE["synth-corpus"] + 4


def test_corrupt_feature_file(full_run, tmp_path):
    _, run_dir = full_run
    import shutil
    copy = tmp_path / "c"
    shutil.copytree(run_dir, copy)
    (copy / "features" / "spk0" / "utt002.qpf").write_bytes(b"junk")
    code = cli.main(["convert", "--config", write_config(tmp_path), "--run-dir", str(copy)])
    assert code == cli.STAGE_BASE["convert"] + 2


def test_qpnet_checkpoint_without_f0_stream(full_run, tmp_path):
    _, run_dir = full_run
    import shutil
    copy = tmp_path / "g"
    shutil.copytree(run_dir, copy)
    path = copy / "converted" / "utt002.qpf"
    feats = codec.read_features(path)
    codec.write_features(path, feats.replace(uv=np.zeros_like(feats.uv)))
    code = cli.main(["generate", "--config", write_config(tmp_path), "--run-dir", str(copy)])
    assert code == cli.STAGE_BASE["generate"] + 3


def test_aux_dimension_mismatch(full_run, tmp_path):
    _, run_dir = full_run
    import shutil
    copy = tmp_path / "d"
    shutil.copytree(run_dir, copy)
    path = copy / "converted" / "utt002.qpf"
    feats = codec.read_features(path)
    codec.write_features(path, feats.replace(mcep=feats.mcep[:, :10]))
    code = cli.main(["generate", "--config", write_config(tmp_path), "--run-dir", str(copy)])
    assert code == cli.STAGE_BASE["generate"] + 3


def test_wn_generate_has_empty_adaptive_plan(full_run, tmp_path):
    _, run_dir = full_run
    import shutil
    copy = tmp_path / "w"
    shutil.copytree(run_dir, copy)
    cfg = write_config(tmp_path, "arch = desk-wn\ngenerate_model = si\n")
    for stage in ("train-vocoder", "generate"):
        extra = ["--dump-plan"] if stage == "generate" else []
        assert cli.main([stage, "--config", cfg, "--run-dir", str(copy), *extra]) == 0
    report = (copy / "generated" / "utt002.plan.txt").read_text()
    assert "adaptive[" not in report and '"adaptive_layers": 0' in report
    # unvoiced conditioning is fine for a fixed-dilation network
    path = copy / "converted" / "utt002.qpf"
    feats = codec.read_features(path)
    codec.write_features(path, feats.replace(uv=np.zeros_like(feats.uv)))
    assert cli.main(["generate", "--config", cfg, "--run-dir", str(copy)]) == 0


def test_identity_pair_beats_cross_speaker(tmp_path):
    extra = "conv_epochs = 60\nconv_hidden = 32\n"
    cfg = pipeline.make_config({"run_dir": str(tmp_path / "i")},
                               TINY + extra + "source_speaker = spk1\ntarget_speaker = spk1\n")
    for stage in ("synth-corpus", "extract", "train-converter", "convert"):
        pipeline.run_stage(cfg, stage)
    orig = codec.read_features(pipeline.feat_path(cfg, "spk1", "utt002"))
    conv = codec.read_features(cfg.path("converted", "utt002.qpf"))
    other = codec.read_features(pipeline.feat_path(cfg, "spk0", "utt002"))
    assert metrics.mcd(orig.mcep, conv.mcep) < metrics.mcd(orig.mcep, other.mcep)


def test_config_text_roundtrip():
    cfg = pipeline.make_config({"steps": "9"}, TINY)
    again = pipeline.make_config(None, cfg.to_text())
    assert again.values == {**cfg.values, "run_dir": again.run_dir}
    assert again.fingerprint() == cfg.fingerprint()
