"""Spectral diversity augmentation for single-source hyperspectral domain generalization.

A small float64 reverse-mode autodiff engine (``tensor``, ``ops``) carries
the generator (``sdm``), its spatial-spectral losses (``sscom``), a
channel-count-agnostic classifier and the joint training loop.
"""

from .augment import AugmentResult, augment_scene, realism_report
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classifier import AdaptiveLeNet, cross_entropy, resample_matrix, spectral_resample
from .config import BenchConfig, EvalConfig, PathsConfig, RunConfig, load_config
from .data import (CubeFormatError, HyperCube, SceneSpec, extract_patches, read_cube, split_dataset,
                   synthesize_scene, write_cube)
from .errors import ConfigError, DataError, NumericError
from .gradcheck import gradcheck, relative_error
from .metrics import EvalReport, kappa, overall_accuracy, psnr, sam, sam_stats, weighted_f1
from .nn import ChannelAttention, Conv2d, Encoder, Linear, Module, ResBlock
from .optim import Adam, AdamState, adam_step
from .sdm import (ChannelMask, SpectralDiversityModule, SpectralMixer, apply_mixer, build_mixer,
                  fixed_mixer, identity_mixer)
from .sscom import LossReport, lambda_schedule, sscom_loss
from .tensor import DomainError, ShapeError, Tensor, backward, no_grad, tape_scope
from .training import (TrainConfig, TrainState, apply_ablation, intermediate_mix, lambda_variant,
                       run_training, supervised_contrastive_loss, train_step)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdamState", "AdaptiveLeNet", "AugmentResult", "BenchConfig", "ChannelAttention", "ChannelMask",
    "CheckpointError", "ConfigError", "Conv2d", "CubeFormatError", "DataError", "DomainError", "Encoder",
    "EvalConfig", "EvalReport", "HyperCube", "Linear", "LossReport", "Module", "NumericError", "PathsConfig",
    "ResBlock", "RunConfig", "SceneSpec", "ShapeError", "SpectralDiversityModule", "SpectralMixer", "Tensor",
    "TrainConfig", "TrainState", "adam_step", "apply_ablation", "apply_mixer", "augment_scene", "backward",
    "build_mixer", "cross_entropy", "extract_patches", "fixed_mixer", "gradcheck", "identity_mixer",
    "intermediate_mix", "kappa", "lambda_schedule", "lambda_variant", "load_checkpoint", "load_config",
    "no_grad", "overall_accuracy", "psnr", "read_cube", "realism_report", "relative_error", "resample_matrix",
    "run_training", "sam", "sam_stats", "save_checkpoint", "spectral_resample", "split_dataset", "sscom_loss",
    "supervised_contrastive_loss", "synthesize_scene", "tape_scope", "train_step", "weighted_f1", "write_cube",
]
