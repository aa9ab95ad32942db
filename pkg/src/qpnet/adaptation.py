"""Speaker adaptation of a trained vocoder: head-only (SDo) or whole-network (SDa) fine-tuning."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import nn
from .exceptions import InputRangeError, ShapeError
from .validation import check_is_fitted
from .vocoder import evaluate_loss, sample_windows, train_step

logger = logging.getLogger(__name__)

MODES = ("sdo", "sda")
DESK_ITERATIONS = {"sda": 50, "sdo": 500}


@dataclass
class LossLedger:
    """Rows of ``(iteration, train_ce, val_ce)``; ``val_ce`` is None without validation data."""

    mode: str
    rows: list = field(default_factory=list)

    def add(self, iteration, train_ce, val_ce):
        self.rows.append((int(iteration), float(train_ce), None if val_ce is None else float(val_ce)))

    def column(self, name):
        k = {"iter": 0, "train_ce": 1, "val_ce": 2}[name]
        return np.array([np.nan if r[k] is None else r[k] for r in self.rows])

    def to_text(self):
        lines = []
        for it, tr, va in self.rows:
            lines.append(f"{it}\t{tr:.6f}\t{'NA' if va is None else f'{va:.6f}'}")
        return "".join(line + "\n" for line in lines)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text, mode=""):
        ledger = cls(mode)
        for line in text.splitlines():
            if line.strip():
                it, tr, va = line.split("\t")
                ledger.add(int(it), float(tr), None if va == "NA" else float(va))
        return ledger


def validation_loss(vp, val_examples):
    """Mean teacher-forced cross-entropy over ``val_examples``; no parameter changes."""
    if not val_examples:
        raise ShapeError("validation data is empty")
    return evaluate_loss(vp, val_examples)


def freeze_for_mode(vp, mode):
    """Mark the trainable subset: the two head convolutions for SDo, everything for SDa."""
    if mode not in MODES:
        raise InputRangeError(f"adaptation mode must be one of {MODES}, got {mode!r}")
    for name, p in vp.params.items():
        p.set_trainable(mode == "sda" or name.startswith("head."))
    return vp


def finetune(vp, mode, examples, iterations=None, val_examples=None, lr=1e-4,
             batch_samples=4096, window=1024, eval_every=10, seed=0):
    """Fine-tune a copy of ``vp`` on target-speaker data.

    Args:
        vp (VocoderParams): speaker-independent model; left untouched.
        mode (str): ``"sdo"`` or ``"sda"``.
        examples (list): adaptation :class:`TrainingExample` items.
        iterations (int): update count; desk default 500 (SDo) / 50 (SDa).
        val_examples (list): optional validation examples.
        eval_every (int): ledger spacing in iterations.

    Returns:
        tuple: ``(adapted VocoderParams, LossLedger)``. Ledger rows hold the
        full-data training CE and validation CE at iteration 0, every
        ``eval_every`` iterations and at the end; no rows when ``iterations`` is 0.
    """
    if mode not in MODES:
        raise InputRangeError(f"adaptation mode must be one of {MODES}, got {mode!r}")
    if not examples:
        raise ShapeError("adaptation data is empty")
    iterations = DESK_ITERATIONS[mode] if iterations is None else int(iterations)
    if iterations < 0 or eval_every < 1:
        raise InputRangeError("iterations must be >= 0 and eval_every >= 1")
    adapted = freeze_for_mode(vp.copy(), mode)
    ledger = LossLedger(mode)
    if iterations == 0:
        return adapted, ledger

    def record(it):
        val = validation_loss(adapted, val_examples) if val_examples else None
        ledger.add(it, evaluate_loss(adapted, examples), val)
        logger.info("%s iter %d train %.4f val %s", mode, it, ledger.rows[-1][1], val)

    rng = np.random.default_rng(seed)
    optimizer = nn.Adam(adapted.parameters(), lr=lr)
    record(0)
    for it in range(1, iterations + 1):
        train_step(adapted, sample_windows(examples, batch_samples, window, rng), optimizer)
        if it % eval_every == 0 or it == iterations:
            record(it)
    for p in adapted.parameters():
        p.set_trainable(True)
    return adapted, ledger


class SpeakerAdapter(BaseEstimator):
    """Estimator wrapper around :func:`finetune`.

    ``fit(examples, val_examples)`` stores ``params_`` and ``ledger_``.
    """

    def __init__(self, base=None, mode="sda", iterations=None, lr=1e-4, batch_samples=4096,
                 window=1024, eval_every=10, seed=0):
        self.base = base
        self.mode = mode
        self.iterations = iterations
        self.lr = lr
        self.batch_samples = batch_samples
        self.window = window
        self.eval_every = eval_every
        self.seed = seed

    def fit(self, X, y=None):
        if self.base is None:
            raise InputRangeError("SpeakerAdapter needs a base VocoderParams")
        self.params_, self.ledger_ = finetune(
            self.base, self.mode, X, self.iterations, y, self.lr, self.batch_samples,
            self.window, self.eval_every, self.seed)
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "params_")
        return -validation_loss(self.params_, X)
