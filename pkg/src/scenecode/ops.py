"""Dense tensor kernels with hand-derived backward passes.

Images and activations are plain numpy arrays in ``(channels, height, width)``
layout; every kernel also accepts a leading batch axis ``(batch, channels,
height, width)`` and returns output of matching rank. Forward passes that need
state for the backward pass return a :class:`LayerCache` alongside the output.

Convolution is cross-correlation (no kernel flip): learned filters absorb
orientation. Padding is zero-padding. Max-pool ties break on the first
position in row-major order so the backward pass is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from .errors import ContractError, DimensionError

ACTIVATION_KINDS = ("relu", "sigmoid")


@dataclass
class LayerCache:
    """Forward-pass state one layer saves for its backward pass."""

    kind: str
    data: dict[str, Any] = field(default_factory=dict)


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote (C,H,W) to (1,C,H,W); report whether input was unbatched."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected 3 or 4 dimensions, got shape {x.shape}")


def _window_view(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """Read-only (B,C,Ho,Wo,k,k) sliding-window view over a padded input."""
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(b, c, h_out, w_out, k, k),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d(
    input: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, LayerCache]:
    """Cross-correlate ``input`` with ``kernels`` and add a per-channel bias.

    ``kernels`` has shape (C_out, C_in, k, k); the output spatial side is
    ``(H + 2*padding - k) // stride + 1``.
    """
    x, squeeze = _as_batched(input)
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"kernels must be (C_out, C_in, k, k), got {kernels.shape}")
    c_out, c_in, k, _ = kernels.shape
    b, c, h, w = x.shape
    if c != c_in:
        raise DimensionError(f"input has {c} channels but kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias must have shape ({c_out},), got {bias.shape}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"padding must be >= 0, got {padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"kernel size {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1

    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    view = _window_view(xp, k, stride, h_out, w_out)
    out = np.tensordot(view, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (B,Ho,Wo,Co)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]

    cache = LayerCache(
        "conv2d",
        {
            "x_padded": xp,
            "input_shape": x.shape,
            "stride": stride,
            "padding": padding,
            "kernel": k,
            "out_shape": out.shape,
            "squeeze": squeeze,
        },
    )
    return (out[0] if squeeze else out), cache


def conv2d_backward(
    cache: LayerCache,
    kernels: np.ndarray,
    grad_output: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, kernels and bias."""
    _expect_kind(cache, "conv2d")
    g, _ = _as_batched(grad_output)
    if g.shape != cache.data["out_shape"]:
        raise DimensionError(
            f"grad shape {g.shape} does not match forward output {cache.data['out_shape']}"
        )
    xp = cache.data["x_padded"]
    stride = cache.data["stride"]
    padding = cache.data["padding"]
    k = cache.data["kernel"]
    b, c, h, w = cache.data["input_shape"]
    h_out, w_out = g.shape[2], g.shape[3]

    view = _window_view(xp, k, stride, h_out, w_out)
    grad_kernels = np.tensordot(g, view, axes=([0, 2, 3], [0, 2, 3]))  # (Co,Ci,k,k)
    grad_bias = g.sum(axis=(0, 2, 3))

    # (B,Ho,Wo,Ci,k,k) -> scatter each tap back onto the padded input grid
    cols = np.tensordot(g, kernels, axes=([1], [0]))
    cols = cols.transpose(0, 3, 1, 2, 4, 5)  # (B,Ci,Ho,Wo,k,k)
    grad_xp = np.zeros_like(xp)
    for p in range(k):
        for q in range(k):
            grad_xp[:, :, p : p + stride * h_out : stride, q : q + stride * w_out : stride] += (
                cols[:, :, :, :, p, q]
            )
    grad_x = grad_xp[:, :, padding : padding + h, padding : padding + w]
    if padding:
        grad_x = np.ascontiguousarray(grad_x)
    if cache.data["squeeze"]:
        grad_x = grad_x[0]
    return grad_x, grad_kernels, grad_bias


def maxpool(input: np.ndarray, window: int = 2) -> tuple[np.ndarray, LayerCache]:
    """Max over non-overlapping ``window``-sized squares.

    The cache records, per output cell, the argmax position as a flat index
    into the (H, W) plane; the first maximum in row-major order wins ties.
    """
    x, squeeze = _as_batched(input)
    b, c, h, w = x.shape
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    if h % window or w % window:
        raise DimensionError(f"extents {h}x{w} are not divisible by window {window}")
    h_out, w_out = h // window, w // window

    tiles = x.reshape(b, c, h_out, window, w_out, window)
    tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h_out, w_out, window * window)
    arg = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]

    rows = arg // window + np.arange(h_out)[None, None, :, None] * window
    cols = arg % window + np.arange(w_out)[None, None, None, :] * window
    argmax_flat = rows * w + cols

    cache = LayerCache(
        "maxpool",
        {
            "argmax_flat": argmax_flat,
            "input_shape": x.shape,
            "window": window,
            "out_shape": out.shape,
            "squeeze": squeeze,
        },
    )
    return (out[0] if squeeze else out), cache


def maxpool_backward(cache: LayerCache, grad_output: np.ndarray) -> np.ndarray:
    """Route each output gradient to the argmax position of its window."""
    _expect_kind(cache, "maxpool")
    g, _ = _as_batched(grad_output)
    if g.shape != cache.data["out_shape"]:
        raise DimensionError(
            f"grad shape {g.shape} does not match forward output {cache.data['out_shape']}"
        )
    b, c, h, w = cache.data["input_shape"]
    flat = cache.data["argmax_flat"]
    grad_x = np.zeros((b, c, h * w), dtype=g.dtype)
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    grad_x[bi, ci, flat] = g  # windows are disjoint: no collisions
    grad_x = grad_x.reshape(b, c, h, w)
    return grad_x[0] if cache.data["squeeze"] else grad_x


def upsample_nn(input: np.ndarray, factor: int = 2) -> tuple[np.ndarray, LayerCache]:
    """Nearest-neighbor upsampling: each cell becomes a factor x factor block."""
    x, squeeze = _as_batched(input)
    if factor < 1:
        raise ContractError(f"factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)
    cache = LayerCache(
        "upsample_nn",
        {"factor": factor, "input_shape": x.shape, "squeeze": squeeze},
    )
    return (out[0] if squeeze else out), cache


def upsample_nn_backward(cache: LayerCache, grad_output: np.ndarray) -> np.ndarray:
    """Sum gradients over each replicated block."""
    _expect_kind(cache, "upsample_nn")
    g, _ = _as_batched(grad_output)
    b, c, h, w = cache.data["input_shape"]
    f = cache.data["factor"]
    if g.shape != (b, c, h * f, w * f):
        raise DimensionError(
            f"grad shape {g.shape} does not match forward output {(b, c, h * f, w * f)}"
        )
    grad_x = g.reshape(b, c, h, f, w, f).sum(axis=(3, 5))
    return grad_x[0] if cache.data["squeeze"] else grad_x


def dense(input: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    """Affine map ``weight @ input + bias``; also accepts a (B, n) batch."""
    x = np.asarray(input)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 2:
        raise DimensionError(f"weight must be 2-d, got shape {weight.shape}")
    m, n = weight.shape
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionError(f"input shape {x.shape} does not match weight columns {n}")
    if bias.shape != (m,):
        raise DimensionError(f"bias must have shape ({m},), got {bias.shape}")
    out = x @ weight.T + bias
    cache = LayerCache("dense", {"x": x, "out_shape": out.shape})
    return out, cache


def dense_backward(
    cache: LayerCache,
    weight: np.ndarray,
    grad_output: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense w.r.t. input, weight and bias."""
    _expect_kind(cache, "dense")
    g = np.asarray(grad_output)
    if g.shape != cache.data["out_shape"]:
        raise DimensionError(
            f"grad shape {g.shape} does not match forward output {cache.data['out_shape']}"
        )
    x = cache.data["x"]
    grad_x = g @ weight
    if g.ndim == 1:
        grad_w = np.outer(g, x)
        grad_b = g.copy()
    else:
        grad_w = g.T @ x
        grad_b = g.sum(axis=0)
    return grad_x, grad_w, grad_b


def activation(input: np.ndarray, kind: str) -> tuple[np.ndarray, LayerCache]:
    """Elementwise relu or sigmoid."""
    x = np.asarray(input)
    if kind == "relu":
        out = np.maximum(x, 0)
        cache = LayerCache("activation", {"kind": kind, "positive": x > 0, "shape": x.shape})
    elif kind == "sigmoid":
        out = expit(x)
        cache = LayerCache("activation", {"kind": kind, "output": out, "shape": x.shape})
    else:
        raise ContractError(f"unknown activation kind {kind!r}")
    return out, cache


def activation_backward(cache: LayerCache, grad_output: np.ndarray) -> np.ndarray:
    _expect_kind(cache, "activation")
    g = np.asarray(grad_output)
    if g.shape != cache.data["shape"]:
        raise DimensionError(
            f"grad shape {g.shape} does not match forward output {cache.data['shape']}"
        )
    if cache.data["kind"] == "relu":
        return g * cache.data["positive"]
    y = cache.data["output"]
    return g * y * (1.0 - y)


def backward(
    kind: str,
    cache: LayerCache,
    params: tuple[np.ndarray, ...],
    grad_output: np.ndarray,
) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Dispatch a backward pass by layer kind.

    Returns ``(grad_input, grad_params)`` where ``grad_params`` matches the
    ``params`` tuple (empty for parameterless layers).
    """
    if kind == "conv2d":
        grad_x, grad_k, grad_b = conv2d_backward(cache, params[0], grad_output)
        return grad_x, (grad_k, grad_b)
    if kind == "maxpool":
        return maxpool_backward(cache, grad_output), ()
    if kind == "upsample_nn":
        return upsample_nn_backward(cache, grad_output), ()
    if kind == "dense":
        grad_x, grad_w, grad_b = dense_backward(cache, params[0], grad_output)
        return grad_x, (grad_w, grad_b)
    if kind == "activation":
        return activation_backward(cache, grad_output), ()
    raise ContractError(f"unknown layer kind {kind!r}")


def _expect_kind(cache: LayerCache, kind: str) -> None:
    if cache.kind != kind:
        raise ContractError(f"cache is for {cache.kind!r}, expected {kind!r}")
