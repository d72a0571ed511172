"""Pose-guided person image generation with non-local attention blocks."""

__version__ = "0.1.0"

from .attention import AttentionParams, apply_attention, compute_attention_map, self_attention
from .data import Batch, PairRecord, SyntheticSpec, assemble_batch, load_pairs, make_synthetic_dataset
from .discriminators import AppearanceDiscriminator, DiscriminatorConfig, PoseDiscriminator
from .generator import CrossModalBlock, Generator, GeneratorConfig, count_parameters
from .losses import (IdentityExtractor, LossWeights, RandomConvExtractor,
                     adversarial_losses, full_loss, l1_loss, perceptual_loss)
from .metrics import (MetricReport, evaluate_images, evaluate_model, inception_score,
                      mask_is, mask_ssim, pckh, psnr, ssim)
from .pose_encoding import KeypointSet, PoseHeatmap, concat_pose_pair, encode_pose
from .training import TrainingConfig, TrainState, create_state, train, train_step

__all__ = [
    "AttentionParams", "apply_attention", "compute_attention_map",
    "self_attention",
    "Batch", "PairRecord", "SyntheticSpec", "assemble_batch", "load_pairs",
    "make_synthetic_dataset",
    "AppearanceDiscriminator", "DiscriminatorConfig", "PoseDiscriminator",
    "CrossModalBlock", "Generator", "GeneratorConfig", "count_parameters",
    "IdentityExtractor", "LossWeights", "RandomConvExtractor",
    "adversarial_losses", "full_loss", "l1_loss", "perceptual_loss",
    "MetricReport", "evaluate_images", "evaluate_model", "inception_score",
    "mask_is", "mask_ssim", "pckh", "psnr", "ssim",
    "KeypointSet", "PoseHeatmap", "concat_pose_pair", "encode_pose",
    "TrainingConfig", "TrainState", "create_state", "train", "train_step",
]
