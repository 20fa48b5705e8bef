"""Encoder/decoder assembly and the latent parametrization.

The encoder maps a grayscale image through conv/pool stages and a dense trunk
to two linear heads emitting the posterior mean and log-variance. The decoder
mirrors it: dense stages, a reshape to a coarse feature map, then
unpool+conv stages ending in a sigmoid so pixels stay in (0, 1).

The latent vector is partitioned by :class:`LatentLayout`: named extrinsic
factors (azimuth, elevation, light azimuth) each own one dimension and the
remaining contiguous block holds intrinsic shape/identity information.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, DimensionError

EXTRINSIC_FACTORS = ("azimuth", "elevation", "light_azimuth")
FACTOR_ORDER = EXTRINSIC_FACTORS + ("intrinsic",)

# Decoder sigmoid outputs are clipped into this open interval so the Bernoulli
# reconstruction term never sees an exact 0 or 1 (float32 sigmoid saturates).
OUTPUT_CLIP = 1e-6


@dataclass(frozen=True)
class LatentLayout:
    """Partition of the latent vector into named extrinsic factors and an
    intrinsic block."""

    total_dim: int
    extrinsic: tuple[tuple[str, int], ...]
    intrinsic_range: tuple[int, int]

    def __post_init__(self):
        if self.total_dim < 1:
            raise ConfigError("total_dim must be positive")
        names = [n for n, _ in self.extrinsic]
        indices = [i for _, i in self.extrinsic]
        for n in names:
            if n not in EXTRINSIC_FACTORS:
                raise ConfigError(f"unknown extrinsic factor {n!r}")
        if len(set(names)) != len(names) or len(set(indices)) != len(indices):
            raise ConfigError("extrinsic names and indices must be distinct")
        lo, hi = self.intrinsic_range
        covered = set(indices) | set(range(lo, hi))
        if len(set(indices) & set(range(lo, hi))) or covered != set(range(self.total_dim)):
            raise ConfigError(
                "extrinsic indices and intrinsic range must partition [0, total_dim)"
            )

    @classmethod
    def default(cls, total_dim: int = 16, factors: tuple[str, ...] = EXTRINSIC_FACTORS):
        """Extrinsic factors at the leading indices, intrinsic block after."""
        ext = tuple((name, i) for i, name in enumerate(factors))
        return cls(total_dim=total_dim, extrinsic=ext, intrinsic_range=(len(ext), total_dim))

    @property
    def factor_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.extrinsic)

    def index_of(self, factor: str) -> int:
        for name, idx in self.extrinsic:
            if name == factor:
                return idx
        raise ConfigError(f"factor {factor!r} is not in this layout")

    def active_indices(self, factor: str) -> np.ndarray:
        """Latent indices trained by a batch whose active factor is `factor`."""
        if factor == "intrinsic":
            return np.arange(self.intrinsic_range[0], self.intrinsic_range[1])
        return np.array([self.index_of(factor)])

    def to_dict(self) -> dict:
        return {
            "total_dim": self.total_dim,
            "extrinsic": [[n, i] for n, i in self.extrinsic],
            "intrinsic_range": list(self.intrinsic_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentLayout":
        return cls(
            total_dim=int(d["total_dim"]),
            extrinsic=tuple((str(n), int(i)) for n, i in d["extrinsic"]),
            intrinsic_range=(int(d["intrinsic_range"][0]), int(d["intrinsic_range"][1])),
        )


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Pool:
    window: int = 2


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class Unpool:
    factor: int = 2


LayerSpec = Union[Conv, Pool, Dense, Unpool]

_SPEC_TAGS = {Conv: "conv", Pool: "pool", Dense: "dense", Unpool: "unpool"}
_TAG_SPECS = {v: k for k, v in _SPEC_TAGS.items()}


def _spec_to_list(spec: LayerSpec) -> list:
    return [_SPEC_TAGS[type(spec)]] + [getattr(spec, f) for f in spec.__dataclass_fields__]


def _spec_from_list(raw: list) -> LayerSpec:
    cls = _TAG_SPECS[raw[0]]
    return cls(*raw[1:])


@dataclass(frozen=True)
class InitSpec:
    """Parameter initialization: zero-mean uniform scaled by gain/sqrt(fan_in),
    biases zero."""

    distribution: str = "uniform"
    gain: float = 1.0

    def __post_init__(self):
        if self.distribution != "uniform":
            raise ConfigError(f"unsupported init distribution {self.distribution!r}")


@dataclass(frozen=True)
class NetworkConfig:
    """Layer-stack description for encoder and decoder.

    ``encoder`` is a sequence of Conv/Pool entries followed by Dense trunk
    entries; two implicit linear heads of width ``layout.total_dim`` produce
    the posterior mean and log-variance. ``decoder`` starts with Dense
    entries, reshapes to ``decoder_reshape`` = (channels, side), then applies
    Unpool/Conv entries; it must end at (1, resolution, resolution).
    """

    resolution: int
    encoder: tuple[LayerSpec, ...]
    decoder: tuple[LayerSpec, ...]
    decoder_reshape: tuple[int, int]
    layout: LatentLayout
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    init: InitSpec = field(default_factory=InitSpec)
    seed: int = 0
    dtype: str = "float32"

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "encoder": [_spec_to_list(s) for s in self.encoder],
            "decoder": [_spec_to_list(s) for s in self.decoder],
            "decoder_reshape": list(self.decoder_reshape),
            "layout": self.layout.to_dict(),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "init": {"distribution": self.init.distribution, "gain": self.init.gain},
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            resolution=int(d["resolution"]),
            encoder=tuple(_spec_from_list(s) for s in d["encoder"]),
            decoder=tuple(_spec_from_list(s) for s in d["decoder"]),
            decoder_reshape=(int(d["decoder_reshape"][0]), int(d["decoder_reshape"][1])),
            layout=LatentLayout.from_dict(d["layout"]),
            hidden_activation=str(d["hidden_activation"]),
            output_activation=str(d["output_activation"]),
            init=InitSpec(str(d["init"]["distribution"]), float(d["init"]["gain"])),
            seed=int(d["seed"]),
            dtype=str(d["dtype"]),
        )


def default_config(
    resolution: int = 32,
    layout: LatentLayout | None = None,
    seed: int = 0,
    dtype: str = "float32",
) -> NetworkConfig:
    """Desk-scale architecture: two conv+pool stages, 256-wide trunk, mirrored
    decoder. Scales with resolution; resolution must be divisible by 4."""
    if resolution % 4:
        raise ConfigError("default architecture needs resolution divisible by 4")
    layout = layout or LatentLayout.default()
    side = resolution // 4
    return NetworkConfig(
        resolution=resolution,
        encoder=(Conv(32, 5, 1, 2), Pool(), Conv(64, 5, 1, 2), Pool(), Dense(256)),
        decoder=(Dense(256), Dense(64 * side * side), Unpool(), Conv(32, 5, 1, 2), Unpool(), Conv(1, 5, 1, 2)),
        decoder_reshape=(64, side),
        layout=layout,
        seed=seed,
        dtype=dtype,
    )


@dataclass
class Network:
    """A built network: its config plus named parameter tensors."""

    config: NetworkConfig
    params: dict[str, np.ndarray]

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    @property
    def layout(self) -> LatentLayout:
        return self.config.layout


@dataclass(frozen=True)
class LatentDistribution:
    """Diagonal-Gaussian posterior parameters for one image."""

    mu: np.ndarray
    logvar: np.ndarray


def _init_tensor(rng: np.random.Generator, shape: tuple, fan_in: int, init: InitSpec, dtype) -> np.ndarray:
    bound = init.gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_network(config: NetworkConfig) -> Network:
    """Instantiate parameters for ``config``; deterministic given (config, seed)."""
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    params: dict[str, np.ndarray] = {}

    def add_conv(name: str, spec: Conv, c_in: int):
        fan_in = c_in * spec.kernel * spec.kernel
        params[f"{name}.w"] = _init_tensor(
            rng, (spec.out_channels, c_in, spec.kernel, spec.kernel), fan_in, config.init, dtype
        )
        params[f"{name}.b"] = np.zeros(spec.out_channels, dtype=dtype)

    def add_dense(name: str, width: int, n_in: int):
        params[f"{name}.w"] = _init_tensor(rng, (width, n_in), n_in, config.init, dtype)
        params[f"{name}.b"] = np.zeros(width, dtype=dtype)

    # Encoder chain: start from a (1, R, R) grayscale image.
    c, h, w = 1, config.resolution, config.resolution
    flat: int | None = None
    for i, spec in enumerate(config.encoder):
        if isinstance(spec, Conv):
            if flat is not None:
                raise ConfigError(f"encoder layer {i}: conv after dense")
            add_conv(f"enc.{i}", spec, c)
            h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if h < 1 or w < 1:
                raise ConfigError(f"encoder layer {i}: output collapsed to {h}x{w}")
            c = spec.out_channels
        elif isinstance(spec, Pool):
            if flat is not None or h % spec.window or w % spec.window:
                raise ConfigError(f"encoder layer {i}: pool needs divisible spatial extents")
            h //= spec.window
            w //= spec.window
        elif isinstance(spec, Dense):
            n_in = flat if flat is not None else c * h * w
            add_dense(f"enc.{i}", spec.width, n_in)
            flat = spec.width
        else:
            raise ConfigError(f"encoder layer {i}: {type(spec).__name__} not allowed in encoder")
    trunk = flat if flat is not None else c * h * w

    total = config.layout.total_dim
    add_dense("enc.mu", total, trunk)
    add_dense("enc.logvar", total, trunk)

    # Decoder chain: dense stages, reshape, then unpool/conv stages.
    n = total
    spatial = False
    rc, rs = config.decoder_reshape
    c, h, w = rc, rs, rs
    for i, spec in enumerate(config.decoder):
        if isinstance(spec, Dense):
            if spatial:
                raise ConfigError(f"decoder layer {i}: dense after spatial stage")
            add_dense(f"dec.{i}", spec.width, n)
            n = spec.width
        elif isinstance(spec, Unpool):
            if not spatial:
                if n != rc * rs * rs:
                    raise ConfigError(
                        f"decoder layer {i}: dense width {n} does not reshape to {rc}x{rs}x{rs}"
                    )
                spatial = True
            h *= spec.factor
            w *= spec.factor
        elif isinstance(spec, Conv):
            if not spatial:
                if n != rc * rs * rs:
                    raise ConfigError(
                        f"decoder layer {i}: dense width {n} does not reshape to {rc}x{rs}x{rs}"
                    )
                spatial = True
            add_conv(f"dec.{i}", spec, c)
            h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            c = spec.out_channels
        else:
            raise ConfigError(f"decoder layer {i}: {type(spec).__name__} not allowed in decoder")
    if not spatial:
        raise ConfigError("decoder has no spatial stage")
    if (c, h, w) != (1, config.resolution, config.resolution):
        raise ConfigError(
            f"decoder ends at ({c},{h},{w}), expected (1,{config.resolution},{config.resolution})"
        )
    return Network(config=config, params=params)


def parameter_count(net: Network) -> int:
    return sum(p.size for p in net.params.values())


def _check_image_batch(net: Network, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=net.dtype)
    r = net.config.resolution
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (1, r, r):
        raise DimensionError(f"expected images of shape (B,1,{r},{r}), got {images.shape}")
    return images


def encode_batch(net: Network, images: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
    """Forward the encoder over a batch; returns (mu, logvar, caches)."""
    images = _check_image_batch(net, images)
    b = images.shape[0]
    x: np.ndarray = images
    caches: list[tuple[str, Any]] = []
    flat = False
    for i, spec in enumerate(net.config.encoder):
        if isinstance(spec, Conv):
            x, cc = ops.conv2d(
                x, net.params[f"enc.{i}.w"], net.params[f"enc.{i}.b"], spec.stride, spec.padding
            )
            x, ac = ops.activation(x, net.config.hidden_activation)
            caches.append((f"enc.{i}", (cc, ac)))
        elif isinstance(spec, Pool):
            x, pc = ops.maxpool(x, spec.window)
            caches.append((f"enc.{i}", pc))
        else:  # Dense
            if not flat:
                shape = x.shape
                x = x.reshape(b, -1)
                caches.append(("enc.flatten", shape))
                flat = True
            x, dc = ops.dense(x, net.params[f"enc.{i}.w"], net.params[f"enc.{i}.b"])
            x, ac = ops.activation(x, net.config.hidden_activation)
            caches.append((f"enc.{i}", (dc, ac)))
    if not flat:
        shape = x.shape
        x = x.reshape(b, -1)
        caches.append(("enc.flatten", shape))
    mu, mc = ops.dense(x, net.params["enc.mu.w"], net.params["enc.mu.b"])
    logvar, lc = ops.dense(x, net.params["enc.logvar.w"], net.params["enc.logvar.b"])
    caches.append(("enc.heads", (mc, lc)))
    return mu, logvar, caches


def encoder_backward(
    net: Network,
    caches: list,
    grad_mu: np.ndarray,
    grad_logvar: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate head gradients through the encoder.

    Returns (parameter gradients, gradient w.r.t. the input images).
    """
    grads: dict[str, np.ndarray] = {}
    name, (mc, lc) = caches[-1]
    assert name == "enc.heads"
    g_mu, grads["enc.mu.w"], grads["enc.mu.b"] = ops.dense_backward(
        mc, net.params["enc.mu.w"], grad_mu
    )
    g_lv, grads["enc.logvar.w"], grads["enc.logvar.b"] = ops.dense_backward(
        lc, net.params["enc.logvar.w"], grad_logvar
    )
    g = g_mu + g_lv
    for name, cache in reversed(caches[:-1]):
        if name == "enc.flatten":
            g = g.reshape(cache)
            continue
        i = int(name.split(".")[1])
        spec = net.config.encoder[i]
        if isinstance(spec, Conv):
            cc, ac = cache
            g = ops.activation_backward(ac, g)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = ops.conv2d_backward(
                cc, net.params[f"{name}.w"], g
            )
        elif isinstance(spec, Pool):
            g = ops.maxpool_backward(cache, g)
        else:
            dc, ac = cache
            g = ops.activation_backward(ac, g)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = ops.dense_backward(
                dc, net.params[f"{name}.w"], g
            )
    return grads, g


def decode_batch(net: Network, z: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward the decoder over a batch of codes; returns (images, caches)."""
    z = np.asarray(z, dtype=net.dtype)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None]
    total = net.layout.total_dim
    if z.ndim != 2 or z.shape[1] != total:
        raise DimensionError(f"expected codes of shape (B,{total}), got {z.shape}")
    b = z.shape[0]
    rc, rs = net.config.decoder_reshape

    x: np.ndarray = z
    caches: list[tuple[str, Any]] = []
    spatial = False
    n_layers = len(net.config.decoder)
    for i, spec in enumerate(net.config.decoder):
        if isinstance(spec, Dense):
            x, dc = ops.dense(x, net.params[f"dec.{i}.w"], net.params[f"dec.{i}.b"])
            x, ac = ops.activation(x, net.config.hidden_activation)
            caches.append((f"dec.{i}", (dc, ac)))
        else:
            if not spatial:
                caches.append(("dec.reshape", x.shape))
                x = x.reshape(b, rc, rs, rs)
                spatial = True
            if isinstance(spec, Unpool):
                x, uc = ops.upsample_nn(x, spec.factor)
                caches.append((f"dec.{i}", uc))
            else:  # Conv
                x, cc = ops.conv2d(
                    x, net.params[f"dec.{i}.w"], net.params[f"dec.{i}.b"], spec.stride, spec.padding
                )
                if i == n_layers - 1:
                    x, ac = ops.activation(x, net.config.output_activation)
                    clipped = np.clip(x, OUTPUT_CLIP, 1.0 - OUTPUT_CLIP)
                    mask = (x == clipped)
                    caches.append((f"dec.{i}", (cc, ac, mask)))
                    x = clipped
                else:
                    x, ac = ops.activation(x, net.config.hidden_activation)
                    caches.append((f"dec.{i}", (cc, ac)))
    return (x[0] if squeeze else x), caches


def decoder_backward(net: Network, caches: list, grad_images: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backpropagate image gradients through the decoder.

    Returns (gradient w.r.t. the codes, parameter gradients).
    """
    g = np.asarray(grad_images)
    if g.ndim == 3:
        g = g[None]
    grads: dict[str, np.ndarray] = {}
    n_layers = len(net.config.decoder)
    for name, cache in reversed(caches):
        if name == "dec.reshape":
            g = g.reshape(cache)
            continue
        i = int(name.split(".")[1])
        spec = net.config.decoder[i]
        if isinstance(spec, Dense):
            dc, ac = cache
            g = ops.activation_backward(ac, g)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = ops.dense_backward(
                dc, net.params[f"{name}.w"], g
            )
        elif isinstance(spec, Unpool):
            g = ops.upsample_nn_backward(cache, g)
        else:
            if i == n_layers - 1:
                cc, ac, mask = cache
                g = g * mask
            else:
                cc, ac = cache
            g = ops.activation_backward(ac, g)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = ops.conv2d_backward(
                cc, net.params[f"{name}.w"], g
            )
    return g, grads


def encode(net: Network, image: np.ndarray) -> tuple[LatentDistribution, list]:
    """Encode a single (1, H, W) image to its posterior parameters."""
    mu, logvar, caches = encode_batch(net, image)
    return LatentDistribution(mu=mu[0], logvar=logvar[0]), caches


def decode(net: Network, z: np.ndarray) -> tuple[np.ndarray, list]:
    """Decode a single latent vector to a (1, H, W) image in (0, 1)."""
    z = np.asarray(z)
    if z.ndim != 1:
        raise DimensionError(f"expected a latent vector, got shape {z.shape}")
    return decode_batch(net, z)


def reparameterize(dist: LatentDistribution, noise: np.ndarray) -> np.ndarray:
    """Sample z = mu + exp(logvar/2) * noise with caller-supplied noise."""
    noise = np.asarray(noise)
    if noise.shape != dist.mu.shape:
        raise ContractError(f"noise shape {noise.shape} does not match mu {dist.mu.shape}")
    return dist.mu + np.exp(0.5 * dist.logvar) * noise


def reparameterize_backward(
    logvar: np.ndarray, noise: np.ndarray, grad_z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the sample w.r.t. mu and logvar (chain rule through z)."""
    return grad_z, grad_z * noise * 0.5 * np.exp(0.5 * logvar)
