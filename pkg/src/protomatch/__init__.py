"""Prototype-guided image-text matching for long-tailed recognition, at toy scale."""

from .classifier import (
    FusedPrototypeClassifier,
    FusionConfig,
    HeadTrainConfig,
    LinearHead,
    predict_fused,
    predict_linear,
    predict_prototype,
    train_linear,
)
from .config import ExperimentConfig
from .exceptions import ConfigError, ProtoMatchError
from .geometry import cosine_sim, normalize, rng_stream, sample_uniform_sphere, softmax
from .losses import LabeledBatch, LossConfig, check_gradients, loss_ccl, loss_pc, loss_total
from .metrics import MetricsReport, SplitThresholds, alignment, neighborhood_uniformity, split_accuracy
from .pipeline import (
    PrototypeMatcher,
    RecognizeConfig,
    TrainConfig,
    run_ablation,
    stage1_match,
    stage2_recognize,
)
from .prototypes import PrototypeBank
from .synth import LongTailSpec, class_counts_profile, generate
from .text_filter import TextCandidateSet, filter_weights, most_relevant, reconstruct

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ExperimentConfig", "FusedPrototypeClassifier", "FusionConfig",
    "HeadTrainConfig", "LabeledBatch", "LinearHead", "LongTailSpec", "LossConfig",
    "MetricsReport", "PrototypeBank", "PrototypeMatcher", "ProtoMatchError",
    "RecognizeConfig", "SplitThresholds", "TextCandidateSet", "TrainConfig",
    "alignment", "check_gradients", "class_counts_profile", "cosine_sim",
    "filter_weights", "generate", "loss_ccl", "loss_pc", "loss_total", "most_relevant",
    "neighborhood_uniformity", "normalize", "predict_fused", "predict_linear",
    "predict_prototype", "reconstruct", "rng_stream", "run_ablation",
    "sample_uniform_sphere", "softmax", "split_accuracy", "stage1_match",
    "stage2_recognize", "train_linear",
]
