"""Batch pipeline stages operating on a run directory.

Every stage reads its inputs from the run directory, writes its outputs
there, and records a manifest entry with the seed and sha256 of every input
and output file. Outputs depend only on the configuration and inputs.
"""

import configparser
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import adaptation, analysis, codec, converter, corpus, metrics, vocoder
from .dilation import format_plan_report, plan_from_f0, preset
from .exceptions import InputRangeError, ShapeError

logger = logging.getLogger(__name__)

# key -> (default, type, help)
CONFIG_KEYS = {
    "run_dir": ("run", str, "directory holding every artifact of the run"),
    "seed": (0, int, "base seed for every stochastic stage"),
    "rate": (codec.DEFAULT_RATE, int, "sampling rate in Hz"),
    "hop": (codec.DEFAULT_HOP, int, "frame shift in samples"),
    "mcep_order": (codec.DEFAULT_MCEP_DIM, int, "mel-cepstrum coefficients per frame"),
    "speaker_ranges": ("120-240,120-240,120-240", str, "comma list of lo-hi F0 ranges, one per speaker"),
    "utterances": (10, int, "utterances per speaker"),
    "duration": (1.0, float, "seconds per utterance"),
    "noise_level": (0.003, float, "std of additive noise in the corpus"),
    "train_utterances": (8, int, "first N utterances train; the rest evaluate"),
    "source_speaker": ("spk0", str, "conversion source"),
    "target_speaker": ("spk1", str, "conversion target and adaptation speaker"),
    "vocoder_speakers": ("", str, "comma list for SI training; empty = all but the target"),
    "arch": ("desk-qpnet", str, "wnf | wnc | qpnet | desk-qpnet | desk-wn"),
    "residual_channels": (0, int, "override, 0 keeps the preset"),
    "skip_channels": (0, int, "override, 0 keeps the preset"),
    "head_channels": (0, int, "override, 0 keeps the preset"),
    "fixed_first": (1, int, "1 = fixed module before adaptive module"),
    "steps": (2000, int, "vocoder training iterations"),
    "lr": (1e-3, float, "vocoder learning rate"),
    "batch_samples": (4096, int, "samples per vocoder update"),
    "window": (1024, int, "contiguous window length inside a batch"),
    "adapt_mode": ("sda", str, "sdo | sda"),
    "adapt_iterations": (-1, int, "-1 = desk default for the mode"),
    "adapt_lr": (1e-4, float, "adaptation learning rate"),
    "adapt_eval_every": (10, int, "ledger spacing in iterations"),
    "conv_hidden": ("64,64", str, "converter hidden layer widths"),
    "conv_epochs": (100, int, "converter epochs"),
    "conv_lr": (1e-3, float, "converter learning rate"),
    "conv_batch": (256, int, "converter frames per update"),
    "use_gv": (1, int, "apply the GV postfilter"),
    "generate_model": ("sd", str, "sd | si checkpoint used by generate"),
    "temperature": (1.0, float, "sampling temperature, 0 = argmax"),
    "gen_max_frames": (0, int, "cap on generated frames per utterance, 0 = no cap"),
}

STAGES = ("synth-corpus", "extract", "train-vocoder", "adapt", "train-converter",
          "convert", "generate", "evaluate")


class ConfigError(InputRangeError):
    """Unknown key or unparsable value in a run configuration."""


@dataclass(frozen=True)
class Config:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def path(self, *parts):
        return os.path.join(self.run_dir, *parts)

    def fingerprint(self):
        text = json.dumps({k: self.values[k] for k in sorted(self.values) if k != "run_dir"},
                          sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_text(self):
        return "".join(f"{k} = {self.values[k]}\n" for k in CONFIG_KEYS if k != "run_dir")


def _coerce(key, raw):
    kind = CONFIG_KEYS[key][1]
    try:
        return kind(raw.strip()) if isinstance(raw, str) else kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def make_config(overrides=None, text=None):
    """Build a :class:`Config` from optional ``key = value`` text plus overrides."""
    values = {k: v[0] for k, v in CONFIG_KEYS.items()}
    entries = {}
    if text:
        # strict=False: a repeated key overrides the earlier one
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                           strict=False)
        parser.optionxform = str
        try:
            parser.read_string("[qpnet]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        entries.update(parser["qpnet"])
    entries.update(overrides or {})
    for key, raw in entries.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return Config(values)


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return make_config(overrides, fh.read())


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(cfg, path):
    return os.path.relpath(path, cfg.run_dir).replace(os.sep, "/")


def record_stage(cfg, stage, inputs, outputs, seed=None):
    """Write ``manifest.json`` with this stage's inputs, outputs and hashes."""
    manifest_path = cfg.path("manifest.json")
    manifest = {}
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest.setdefault("stages", {})[stage] = {
        "config": cfg.fingerprint(),
        "seed": seed,
        "inputs": {_rel(cfg, p): sha256_file(p) for p in sorted(inputs)},
        "outputs": {_rel(cfg, p): sha256_file(p) for p in sorted(outputs)},
    }
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _require(paths):
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"missing input {missing[0]}" +
                                (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    return paths


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _speakers(cfg):
    ranges = []
    for item in cfg.speaker_ranges.split(","):
        try:
            lo, hi = (float(v) for v in item.strip().split("-"))
        except ValueError:
            raise ConfigError(f"bad speaker range {item!r}; expected lo-hi") from None
        ranges.append((lo, hi))
    return corpus.default_speakers(ranges)


def _names(cfg):
    return [s.name for s in _speakers(cfg)]


def _utts(cfg, split):
    ids = [f"utt{u:03d}" for u in range(cfg.utterances)]
    if not 0 < cfg.train_utterances <= cfg.utterances:
        raise ConfigError("train_utterances must lie in [1, utterances]")
    return ids[:cfg.train_utterances] if split == "train" else ids[cfg.train_utterances:]


def _check_speaker(cfg, name):
    if name not in _names(cfg):
        raise ConfigError(f"speaker {name!r} not in corpus {_names(cfg)}")
    return name


def wav_path(cfg, spk, utt):
    return cfg.path("corpus", spk, f"{utt}.wav")


def feat_path(cfg, spk, utt):
    return cfg.path("features", spk, f"{utt}.qpf")


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def stage_synth_corpus(cfg):
    conf = corpus.CorpusConfig(_speakers(cfg), cfg.utterances, cfg.duration, cfg.rate, cfg.hop,
                               cfg.noise_level, seed=cfg.seed)
    outputs = []
    for spk, utt, wave, f0 in corpus.generate_corpus(conf):
        _mkdir(cfg.path("corpus", spk))
        path = wav_path(cfg, spk, utt)
        codec.write_wav(path, wave)
        side = path[:-4] + ".f0"
        write_text(side, "".join(f"{v:.4f}\n" for v in f0))
        outputs += [path, side]
    record_stage(cfg, "synth-corpus", [], outputs, cfg.seed)
    return outputs


def stage_extract(cfg):
    inputs, outputs = [], []
    for spk in _names(cfg):
        _mkdir(cfg.path("features", spk))
        for utt in _utts(cfg, "train") + _utts(cfg, "eval"):
            src = _require([wav_path(cfg, spk, utt)])[0]
            wave = codec.read_wav(src)
            if wave.rate != cfg.rate:
                raise ShapeError(f"{src}: rate {wave.rate} differs from config rate {cfg.rate}")
            feats = analysis.extract_features(wave, hop=cfg.hop, order=cfg.mcep_order)
            out = feat_path(cfg, spk, utt)
            codec.write_features(out, feats)
            inputs.append(src)
            outputs.append(out)
    record_stage(cfg, "extract", inputs, outputs)
    return outputs


def _arch_spec(cfg):
    overrides = {k: getattr(cfg, k) for k in ("residual_channels", "skip_channels", "head_channels")
                 if getattr(cfg, k) > 0}
    return preset(cfg.arch, aux_channels=2 + cfg.mcep_order + 2,
                  fixed_first=bool(cfg.fixed_first), **overrides)


def _examples(cfg, spec, speakers, split):
    examples, inputs = [], []
    for spk in speakers:
        for utt in _utts(cfg, split):
            w, f = _require([wav_path(cfg, spk, utt), feat_path(cfg, spk, utt)])
            feats = codec.read_features(f)
            if feats.dim != spec.aux_channels:
                raise ShapeError(f"{f}: {feats.dim} aux columns, network expects {spec.aux_channels}")
            examples.append(vocoder.prepare_example(spec, codec.read_wav(w), feats, cfg.rate))
            inputs += [w, f]
    return examples, inputs


def _si_speakers(cfg):
    if cfg.vocoder_speakers.strip():
        return [_check_speaker(cfg, s.strip()) for s in cfg.vocoder_speakers.split(",")]
    return [s for s in _names(cfg) if s != cfg.target_speaker]


def stage_train_vocoder(cfg):
    spec = _arch_spec(cfg)
    examples, inputs = _examples(cfg, spec, _si_speakers(cfg), "train")
    vp = vocoder.build(spec, seed=cfg.seed, rate=cfg.rate)
    vocoder.fit_aux_stats(vp, [ex.aux for ex in examples])
    losses = vocoder.train(vp, examples, cfg.steps, cfg.lr, cfg.batch_samples, cfg.window, cfg.seed)
    _mkdir(cfg.path("models"))
    out = cfg.path("models", "vocoder_si.qpw")
    vocoder.save_vocoder(out, vp)
    curve = cfg.path("models", "vocoder_si_loss.tsv")
    write_text(curve, "".join(f"{i + 1}\t{v:.6f}\n" for i, v in enumerate(losses)))
    record_stage(cfg, "train-vocoder", inputs, [out, curve], cfg.seed)
    return [out, curve]


def stage_adapt(cfg):
    si_path = _require([cfg.path("models", "vocoder_si.qpw")])[0]
    vp = vocoder.load_vocoder(si_path)
    target = _check_speaker(cfg, cfg.target_speaker)
    examples, inputs = _examples(cfg, vp.spec, [target], "train")
    val, val_inputs = _examples(cfg, vp.spec, [target], "eval")
    iterations = None if cfg.adapt_iterations < 0 else cfg.adapt_iterations
    adapted, ledger = adaptation.finetune(
        vp, cfg.adapt_mode, examples, iterations, val or None, cfg.adapt_lr,
        cfg.batch_samples, cfg.window, cfg.adapt_eval_every, cfg.seed)
    out = cfg.path("models", "vocoder_sd.qpw")
    vocoder.save_vocoder(out, adapted)
    ledger_path = cfg.path("models", f"adapt_{cfg.adapt_mode}_loss.tsv")
    ledger.write(ledger_path)
    record_stage(cfg, "adapt", [si_path] + inputs + val_inputs, [out, ledger_path], cfg.seed)
    return [out, ledger_path]


def _hidden(cfg):
    try:
        return tuple(int(v) for v in cfg.conv_hidden.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad conv_hidden {cfg.conv_hidden!r}") from None


def stage_train_converter(cfg):
    src = _check_speaker(cfg, cfg.source_speaker)
    tgt = _check_speaker(cfg, cfg.target_speaker)
    inputs = []
    pairs = []
    for utt in _utts(cfg, "train"):
        a, b = _require([feat_path(cfg, src, utt), feat_path(cfg, tgt, utt)])
        pairs.append((codec.read_features(a), codec.read_features(b)))
        inputs += [a, b]
    est = converter.SpectralConverter(_hidden(cfg), cfg.conv_epochs, cfg.conv_lr, cfg.conv_batch,
                                      use_gv=bool(cfg.use_gv), seed=cfg.seed)
    est.fit([p[0] for p in pairs], [p[1] for p in pairs])
    _mkdir(cfg.path("models"))
    out = cfg.path("models", "converter.qpw")
    converter.save_converter(out, est.model_)
    curve = cfg.path("models", "converter_loss.tsv")
    write_text(curve, "".join(f"{i}\t{v:.8f}\n" for i, v in enumerate(est.loss_curve_)))
    record_stage(cfg, "train-converter", inputs, [out, curve], cfg.seed)
    return [out, curve]


def stage_convert(cfg):
    model_path = _require([cfg.path("models", "converter.qpw")])[0]
    model = converter.load_converter(model_path)
    src = _check_speaker(cfg, cfg.source_speaker)
    _mkdir(cfg.path("converted"))
    inputs, outputs = [model_path], []
    for utt in _utts(cfg, "eval"):
        f = _require([feat_path(cfg, src, utt)])[0]
        converted = converter.convert_features(model, codec.read_features(f), bool(cfg.use_gv))
        out = cfg.path("converted", f"{utt}.qpf")
        codec.write_features(out, converted)
        inputs.append(f)
        outputs.append(out)
    record_stage(cfg, "convert", inputs, outputs)
    return outputs


def _trim(features, max_frames):
    if max_frames <= 0 or len(features) <= max_frames:
        return features
    n = max_frames
    return codec.FrameFeatures(features.continuous_f0[:n], features.uv[:n], features.mcep[:n],
                               features.coded_ap[:n], features.hop)


def generate_one(vp, features, seed, temperature, dump_plan=None):
    """Generate audio for one feature set; optionally write the dilation plan report."""
    if features.dim != vp.spec.aux_channels:
        raise ShapeError(f"features have {features.dim} aux columns, "
                         f"checkpoint expects {vp.spec.aux_channels}")
    if vp.spec.is_adaptive and not np.any(features.uv > 0.5):
        raise ShapeError("pitch-adaptive checkpoint needs an F0 stream with voiced frames")
    aux = codec.upsample_features(features)
    plan = plan_from_f0(vp.spec, aux[:, 0], vp.rate)
    if dump_plan:
        write_text(dump_plan, format_plan_report(vp.spec, plan, vp.rate))
    return vocoder.generate(vp, aux, plan, seed=seed, temperature=temperature)


def stage_generate(cfg, dump_plan=False):
    name = {"sd": "vocoder_sd.qpw", "si": "vocoder_si.qpw"}.get(cfg.generate_model)
    if name is None:
        raise ConfigError("generate_model must be sd or si")
    model_path = _require([cfg.path("models", name)])[0]
    vp = vocoder.load_vocoder(model_path)
    _mkdir(cfg.path("generated"))
    inputs, outputs = [model_path], []
    for i, utt in enumerate(_utts(cfg, "eval")):
        f = _require([cfg.path("converted", f"{utt}.qpf")])[0]
        feats = _trim(codec.read_features(f), cfg.gen_max_frames)
        plan_path = cfg.path("generated", f"{utt}.plan.txt") if dump_plan else None
        codes, wave = generate_one(vp, feats, cfg.seed + i, cfg.temperature, plan_path)
        out = cfg.path("generated", f"{utt}.wav")
        codec.write_wav(out, wave)
        code_path = cfg.path("generated", f"{utt}.codes")
        with open(code_path, "wb") as fh:
            fh.write(codes.astype(np.uint8).tobytes())
        inputs.append(f)
        outputs += [out, code_path] + ([plan_path] if plan_path else [])
    record_stage(cfg, "generate", inputs, outputs, cfg.seed)
    return outputs


def stage_evaluate(cfg):
    pairs, inputs = [], []
    for utt in _utts(cfg, "eval"):
        w = cfg.path("generated", f"{utt}.wav")
        f = cfg.path("converted", f"{utt}.qpf")
        inputs += [p for p in (w, f) if os.path.exists(p)]
        pairs.append((utt, lambda w=w: codec.read_wav(w),
                      lambda f=f: _trim(codec.read_features(f), cfg.gen_max_frames)))
    _mkdir(cfg.path("reports"))
    out = cfg.path("reports", "evaluation.tsv")
    metrics.evaluate_run(pairs, out)
    record_stage(cfg, "evaluate", inputs, [out])
    return [out]


STAGE_FUNCTIONS = {
    "synth-corpus": stage_synth_corpus,
    "extract": stage_extract,
    "train-vocoder": stage_train_vocoder,
    "adapt": stage_adapt,
    "train-converter": stage_train_converter,
    "convert": stage_convert,
    "generate": stage_generate,
    "evaluate": stage_evaluate,
}


def run_stage(cfg, stage, **kwargs):
    if stage not in STAGE_FUNCTIONS:
        raise ConfigError(f"unknown stage {stage!r}")
    _mkdir(cfg.run_dir)
    logger.info("stage %s", stage)
    return STAGE_FUNCTIONS[stage](cfg, **kwargs)


def run_all(cfg, dump_plan=False):
    """Run every stage in order and return the evaluation report path."""
    for stage in STAGES:
        kwargs = {"dump_plan": dump_plan} if stage == "generate" else {}
        outputs = run_stage(cfg, stage, **kwargs)
    write_text(cfg.path("config.resolved"), cfg.to_text())
    return outputs[0]
