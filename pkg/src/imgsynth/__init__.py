"""Synthesize realistic variations of a single image by inverting a frozen
classifier: feature-statistics matching plus an adversarially trained patch
critic, with position, shape, style, and counterfactual controls."""

from .backbone import (
    ClassifierHandle,
    FeatureBundle,
    FeatureStats,
    channel_stats,
    dataset_stats,
    forward_with_features,
    load_classifier,
    parameter_checksum,
)
from .critic import CriticConfig, CriticState, critic_score, critic_train_step, init_critic
from .exceptions import ConfigError, DivergenceError, LoadError
from .losses import LossWeights, MaskPair, ObjectiveInputs, total_objective
from .pipeline import (
    ImageState,
    SynthesisJob,
    SynthesisResult,
    ablate_layers,
    init_image,
    job_manifest,
    prepare,
    run_stage,
    synthesize,
)

__all__ = [
    "ClassifierHandle", "FeatureBundle", "FeatureStats", "channel_stats",
    "dataset_stats", "forward_with_features", "load_classifier",
    "parameter_checksum", "CriticConfig", "CriticState", "critic_score",
    "critic_train_step", "init_critic", "ConfigError", "DivergenceError",
    "LoadError", "LossWeights", "MaskPair", "ObjectiveInputs",
    "total_objective", "ImageState", "SynthesisJob", "SynthesisResult",
    "ablate_layers", "init_image", "job_manifest", "prepare", "run_stage",
    "synthesize",
]

__version__ = "0.1.0"
