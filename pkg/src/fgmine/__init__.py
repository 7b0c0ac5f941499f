"""Bayesian-optimization-driven fine-grained vision negative mining for
contrastive path-instruction ranking, on a deterministic synthetic world."""

from .world import WorldConfig, World, Episode, Trajectory, Instruction, generate_world, dataset
from .encoder import EncoderDims, EncoderParams, init_params
from .forge import Mask
from .training import TrainConfig, preset_config, train

__version__ = "0.1.0"

__all__ = [
    "WorldConfig", "World", "Episode", "Trajectory", "Instruction",
    "generate_world", "dataset",
    "EncoderDims", "EncoderParams", "init_params",
    "Mask", "TrainConfig", "preset_config", "train",
    "__version__",
]
