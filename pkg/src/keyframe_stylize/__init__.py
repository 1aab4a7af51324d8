"""Few-shot keyframe stylization: train an image-to-image network from a handful
of painted keyframes plus unpaired frames, then stylize frames feed-forward."""

from .core import (
    ImageBuffer,
    KeyframePair,
    TrainingConfig,
    UnpairedSet,
    compute_lambda,
    load_image,
    resize_long_side,
    save_image,
)
from .generator import GeneratorConfig, build_generator, forward, receptive_field
from .inference import StylizeJob, stylize_image, stylize_sequence
from .perceptual import extract_features, gram, l1_loss, style_loss, total_objective
from .sampler import SamplingSpec, adaptive_sample, frame_difference, uniform_sample
from .trainer import Checkpoint, load_checkpoint, save_checkpoint, train, training_step

__version__ = "0.1.0"
