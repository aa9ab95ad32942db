"""Pitch-adaptive WaveNet vocoder and statistical voice-conversion toolkit in numpy."""

from .adaptation import LossLedger, SpeakerAdapter, finetune, validation_loss
from .analysis import FeatureExtractor, estimate_f0, extract_features, melcep_extract
from .codec import (
    FrameFeatures,
    MuLawQuantizer,
    WaveBuffer,
    interpolate_continuous_f0,
    mulaw_decode,
    mulaw_encode,
    read_features,
    read_wav,
    upsample_features,
    write_features,
    write_wav,
)
from .converter import (
    ConversionModel,
    SpectralConverter,
    append_deltas,
    gv_postfilter,
    mlpg,
    train_converter,
    transform_logf0,
)
from .dilation import ArchitectureSpec, DilationPlan, build_plan, preset, receptive_field
from .exceptions import (
    FormatError,
    GraphError,
    InputRangeError,
    NotFittedError,
    QPNetError,
    ShapeError,
)
from .metrics import evaluate_run, logf0_rmse, mcd
from .vocoder import QPNetVocoder, build, generate, teacher_forced_forward

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "ConversionModel",
    "DilationPlan",
    "FeatureExtractor",
    "FormatError",
    "FrameFeatures",
    "GraphError",
    "InputRangeError",
    "LossLedger",
    "MuLawQuantizer",
    "NotFittedError",
    "QPNetError",
    "QPNetVocoder",
    "ShapeError",
    "SpeakerAdapter",
    "SpectralConverter",
    "WaveBuffer",
    "append_deltas",
    "build",
    "build_plan",
    "estimate_f0",
    "evaluate_run",
    "extract_features",
    "finetune",
    "generate",
    "gv_postfilter",
    "interpolate_continuous_f0",
    "logf0_rmse",
    "mcd",
    "melcep_extract",
    "mlpg",
    "mulaw_decode",
    "mulaw_encode",
    "preset",
    "read_features",
    "read_wav",
    "receptive_field",
    "teacher_forced_forward",
    "train_converter",
    "transform_logf0",
    "upsample_features",
    "validation_loss",
    "write_features",
    "write_wav",
]
