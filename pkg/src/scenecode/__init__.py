"""Learns a factored scene code from images: a convolutional variational
encoder/decoder trained on single-factor mini-batches so that designated
latent neurons track azimuth, elevation and light direction."""

from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    DimensionError,
    DomainError,
    FormatError,
    SceneCodeError,
    VersionError,
)
from .network import (
    LatentDistribution,
    LatentLayout,
    Network,
    NetworkConfig,
    build_network,
    decode,
    default_config,
    encode,
    reparameterize,
)
from .optim import RmspropHyper, RmspropState, rmsprop_step
from .scene import SceneParams, TransformBatch, make_batch, render
from .training import TrainConfig, clamp_latents, invariance_gradients, select_batch_type, train, train_step

__version__ = "0.1.0"

__all__ = [
    "SceneCodeError", "DimensionError", "ContractError", "ConfigError", "DomainError",
    "FormatError", "VersionError", "CorruptionError",
    "LatentLayout", "NetworkConfig", "Network", "LatentDistribution",
    "build_network", "default_config", "encode", "decode", "reparameterize",
    "RmspropHyper", "RmspropState", "rmsprop_step",
    "SceneParams", "TransformBatch", "render", "make_batch",
    "TrainConfig", "select_batch_type", "clamp_latents", "invariance_gradients",
    "train_step", "train",
    "__version__",
]
