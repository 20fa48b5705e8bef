"""Clamped mini-batch training with invariance targeting, plus a plain
variational baseline.

Each step consumes a batch in which exactly one scene factor varies. The
sampled codes of all *inactive* latents are clamped to their batch means
before decoding, which forces the active latents to explain the whole batch's
variation. On the way back, the decoder's gradient at the inactive latents is
discarded and replaced by a small deviation-from-mean signal, so those
neurons learn to ignore the active transformation. The KL term's gradients
attach directly at the posterior heads and are never modified.

In baseline mode the clamp and the gradient replacement are skipped entirely;
everything else is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigError, ContractError
from .loss import kl_divergence, reconstruction_loss
from .network import (
    FACTOR_ORDER,
    Network,
    NetworkConfig,
    build_network,
    decode_batch,
    decoder_backward,
    encode_batch,
    encoder_backward,
    reparameterize_backward,
)
from .optim import RmspropHyper, RmspropState, rmsprop_step
from .scene import TransformBatch

DEFAULT_RATIO = {"azimuth": 1.0, "elevation": 1.0, "light_azimuth": 1.0, "intrinsic": 10.0}

TRAIN_MODES = ("disentangled", "baseline")


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig
    ratio: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATIO))
    invariance_scale: float = 0.01
    optimizer: RmspropHyper = field(default_factory=RmspropHyper)
    steps: int = 1
    seed: int = 0
    mode: str = "disentangled"
    reconstruction: str = "bernoulli"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.invariance_scale <= 0:
            raise ConfigError("invariance_scale must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if not self.ratio or any(w < 0 for w in self.ratio.values()) or sum(self.ratio.values()) <= 0:
            raise ConfigError("ratio weights must be nonnegative with a positive sum")


@dataclass(frozen=True)
class TrainMetrics:
    step: int
    factor: str
    reconstruction: float
    kl: float
    total: float

    def __post_init__(self):
        if not (np.isfinite(self.reconstruction) and np.isfinite(self.kl)):
            raise ContractError("non-finite loss encountered")


def select_batch_type(rng: np.random.Generator, ratio: dict[str, float]) -> str:
    """Draw the factor to train on with probability proportional to its weight."""
    names = [f for f in FACTOR_ORDER if f in ratio]
    if len(names) != len(ratio):
        unknown = set(ratio) - set(names)
        raise ContractError(f"unknown factors in ratio: {sorted(unknown)}")
    weights = np.array([ratio[f] for f in names], dtype=float)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ContractError("ratio weights must be nonnegative with a positive sum")
    p = weights / weights.sum()
    return names[int(rng.choice(len(names), p=p))]


def clamp_latents(z_batch: np.ndarray, active_indices: np.ndarray) -> np.ndarray:
    """Replace every inactive column with that column's batch mean."""
    z_batch = np.asarray(z_batch)
    if z_batch.ndim != 2 or z_batch.shape[0] < 2:
        raise ContractError(f"need a (B>=2, D) matrix, got shape {z_batch.shape}")
    active_indices = np.asarray(active_indices, dtype=int)
    if active_indices.size == 0:
        raise ContractError("active index set must be nonempty")
    d = z_batch.shape[1]
    if active_indices.min() < 0 or active_indices.max() >= d:
        raise ContractError(f"active indices out of range for D={d}")
    inactive = np.setdiff1d(np.arange(d), active_indices)
    out = z_batch.copy()
    out[:, inactive] = z_batch[:, inactive].mean(axis=0)
    return out


def invariance_gradients(
    z_batch: np.ndarray,
    active_indices: np.ndarray,
    decoder_grad_z: np.ndarray,
    scale: float = 0.01,
) -> np.ndarray:
    """Gradient surgery at the code layer.

    Active columns pass the decoder gradient through unchanged; inactive
    columns discard it and receive scale * (z - column mean) instead.
    """
    z_batch = np.asarray(z_batch)
    decoder_grad_z = np.asarray(decoder_grad_z)
    if z_batch.shape != decoder_grad_z.shape:
        raise ContractError(
            f"z shape {z_batch.shape} does not match grad shape {decoder_grad_z.shape}"
        )
    active_indices = np.asarray(active_indices, dtype=int)
    if active_indices.size == 0:
        raise ContractError("active index set must be nonempty")
    inactive = np.setdiff1d(np.arange(z_batch.shape[1]), active_indices)
    out = decoder_grad_z.copy()
    cols = z_batch[:, inactive]
    out[:, inactive] = scale * (cols - cols.mean(axis=0))
    return out


def train_step(
    net: Network,
    batch: TransformBatch,
    optim_state: RmspropState,
    hyper: RmspropHyper,
    rng: np.random.Generator,
    mode: str = "disentangled",
    invariance_scale: float = 0.01,
    reconstruction: str = "bernoulli",
) -> TrainMetrics:
    """One optimizer step on one single-factor batch.

    Draws exactly one standard-normal noise matrix of shape (B, total_dim)
    from ``rng`` (in the network dtype) per call.
    """
    if mode not in TRAIN_MODES:
        raise ContractError(f"unknown mode {mode!r}")
    layout = net.layout
    images = batch.images.astype(net.dtype, copy=False)
    b = images.shape[0]

    mu, logvar, enc_caches = encode_batch(net, images)
    noise = rng.standard_normal((b, layout.total_dim), dtype=net.dtype)
    z = mu + np.exp(0.5 * logvar) * noise

    if mode == "disentangled":
        active = layout.active_indices(batch.active_factor)
        z_in = clamp_latents(z, active)
    else:
        z_in = z

    x_hat, dec_caches = decode_batch(net, z_in)
    recon, grad_x_hat = reconstruction_loss(images, x_hat, reconstruction)
    grad_z_dec, dec_grads = decoder_backward(net, dec_caches, grad_x_hat)

    if mode == "disentangled":
        grad_z = invariance_gradients(z, active, grad_z_dec, invariance_scale)
    else:
        grad_z = grad_z_dec

    kl, grad_mu_kl, grad_logvar_kl = kl_divergence(mu, logvar)
    grad_mu, grad_logvar = reparameterize_backward(logvar, noise, grad_z)
    grad_mu = grad_mu + grad_mu_kl
    grad_logvar = grad_logvar + grad_logvar_kl
    enc_grads, _ = encoder_backward(net, enc_caches, grad_mu, grad_logvar)

    grads = {**enc_grads, **dec_grads}
    inv_b = 1.0 / b
    for name in grads:
        grads[name] = grads[name] * inv_b
    rmsprop_step(net.params, grads, optim_state, hyper)

    return TrainMetrics(
        step=optim_state.step,
        factor=batch.active_factor,
        reconstruction=recon / b,
        kl=kl / b,
        total=(recon + kl) / b,
    )


@dataclass
class TrainResult:
    network: Network
    optim_state: RmspropState
    rng: np.random.Generator
    metrics: list[TrainMetrics]
    steps_done: int
    exhausted: bool


def format_metrics_line(m: TrainMetrics) -> str:
    return f"{m.step}\t{m.factor}\t{m.reconstruction:.6f}\t{m.kl:.6f}\t{m.total:.6f}"

METRICS_HEADER = "step\tfactor\treconstruction\tkl\ttotal"


def train(
    config: TrainConfig,
    batches: Iterable[TransformBatch],
    metrics_path: str | None = None,
    on_checkpoint: Callable[[TrainResult], None] | None = None,
) -> TrainResult:
    """Run up to ``config.steps`` training steps over ``batches``.

    Stops cleanly with a partial result if the batch source runs dry.
    Fully reproducible given (config, batch sequence).
    """
    net = build_network(config.network)
    optim_state = RmspropState.for_params(net.params)
    rng = np.random.default_rng(config.seed)
    metrics: list[TrainMetrics] = []
    result = TrainResult(net, optim_state, rng, metrics, steps_done=0, exhausted=False)

    log = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        if log is not None and log.tell() == 0:
            log.write(METRICS_HEADER + "\n")
        it: Iterator[TransformBatch] = iter(batches)
        for step in range(config.steps):
            try:
                batch = next(it)
            except StopIteration:
                result.exhausted = True
                break
            m = train_step(
                net,
                batch,
                optim_state,
                config.optimizer,
                rng,
                mode=config.mode,
                invariance_scale=config.invariance_scale,
                reconstruction=config.reconstruction,
            )
            metrics.append(m)
            result.steps_done = step + 1
            if log is not None:
                log.write(format_metrics_line(m) + "\n")
            if (
                on_checkpoint is not None
                and config.checkpoint_every > 0
                and (step + 1) % config.checkpoint_every == 0
            ):
                on_checkpoint(result)
    finally:
        if log is not None:
            log.close()
    return result


def synthetic_batches(
    config: TrainConfig,
    resolution: int,
    batch_size: int = 20,
    kind: str = "head",
    seed: int | None = None,
) -> Iterator[TransformBatch]:
    """Endless on-the-fly batch stream following the configured type ratio."""
    from .scene import make_batch  # local import keeps module load light

    rng = np.random.default_rng(config.seed + 1 if seed is None else seed)
    while True:
        factor = select_batch_type(rng, config.ratio)
        yield make_batch(rng, factor, batch_size=batch_size, resolution=resolution, kind=kind)
