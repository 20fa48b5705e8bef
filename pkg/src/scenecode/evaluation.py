"""Quantitative evaluation of a trained code: equivariance of each extrinsic
latent with its generating parameter, invariance of the others, latent-sweep
re-rendering, and novel-view reconstruction against a plain-trained baseline.

All metrics read the posterior mean (no sampling), so reports are
deterministic given (network, data). Functions that only need an encoder
accept either a built :class:`~scenecode.network.Network` or a callable
mapping an image batch to a mean matrix, which keeps the metrics testable
against synthetic encoder stubs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, ContractError
from .network import LatentLayout, Network, decode, encode_batch
from .scene import SceneParams, TransformBatch, render


def encode_mu(net, images: np.ndarray) -> np.ndarray:
    """Posterior means for a batch of images; accepts an encoder stub."""
    if callable(net) and not isinstance(net, Network):
        return np.asarray(net(images))
    mu, _, _ = encode_batch(net, images)
    return mu


@dataclass
class EquivarianceReport:
    factor: str
    truth: np.ndarray
    inferred: np.ndarray
    pearson_r: float
    spearman_rho: float
    degenerate: bool = False


@dataclass
class InvarianceReport:
    """Standardized within-batch latent variances, grouped by active factor."""

    factors: list[str]
    active_variance: dict[str, float]
    inactive_extrinsic_variance: dict[str, float]
    ratio: dict[str, float]
    per_latent: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class NovelViewReport:
    rows: list[tuple[int, float, float, float]]  # (case, target_azimuth, model_mse, baseline_mse)
    model_mean_mse: float
    baseline_mean_mse: float


def correlation_report(factor: str, truth: np.ndarray, inferred: np.ndarray) -> EquivarianceReport:
    truth = np.asarray(truth, dtype=float)
    inferred = np.asarray(inferred, dtype=float)
    if truth.shape != inferred.shape or truth.ndim != 1:
        raise ContractError("truth and inferred must be equal-length vectors")
    degenerate = truth.size < 2 or np.ptp(truth) == 0.0 or np.ptp(inferred) == 0.0
    if degenerate:
        r = rho = 0.0
    else:
        r = float(stats.pearsonr(truth, inferred).statistic)
        rho = float(stats.spearmanr(truth, inferred).statistic)
    return EquivarianceReport(factor, truth, inferred, r, rho, degenerate)


def equivariance_curve(
    net,
    layout: LatentLayout,
    factor: str,
    sweep: list[SceneParams],
    resolution: int,
) -> EquivarianceReport:
    """Correlate the factor's latent mean with ground truth over one sweep.

    The sweep must vary only the named factor.
    """
    idx = layout.index_of(factor)  # raises ConfigError for unknown factors
    if not sweep:
        raise ContractError("sweep must be nonempty")
    base = sweep[0]
    for p in sweep:
        for name in ("azimuth", "elevation", "light_azimuth"):
            if name != factor and getattr(p, name) != getattr(base, name):
                raise ContractError(f"sweep varies {name} besides {factor}")
        if p.intrinsic != base.intrinsic or p.kind != base.kind:
            raise ContractError("sweep varies intrinsic parameters")
    images = np.stack([render(p, resolution) for p in sweep])
    mu = encode_mu(net, images)
    truth = np.array([p.value_of(factor) for p in sweep])
    return correlation_report(factor, truth, mu[:, idx])


def equivariance_from_batches(
    net,
    layout: LatentLayout,
    factor: str,
    batches: list[TransformBatch],
    window: tuple[float, float] | None = None,
) -> EquivarianceReport:
    """Pool (truth, latent mean) pairs from every batch varying ``factor``.

    Pooled pairs span many identities, matching held-out test conditions.
    ``window`` optionally restricts to a ground-truth value range.
    """
    idx = layout.index_of(factor)
    truths: list[np.ndarray] = []
    inferred: list[np.ndarray] = []
    for batch in batches:
        if batch.active_factor != factor:
            continue
        mu = encode_mu(net, batch.images)
        truths.append(batch.values())
        inferred.append(mu[:, idx])
    if not truths:
        raise ContractError(f"no batches with active factor {factor!r}")
    truth = np.concatenate(truths)
    pred = np.concatenate(inferred)
    if window is not None:
        keep = (truth >= window[0]) & (truth <= window[1])
        truth, pred = truth[keep], pred[keep]
    return correlation_report(factor, truth, pred)


def invariance_score(net, layout: LatentLayout, batches: list[TransformBatch]) -> InvarianceReport:
    """Within-batch variance of every latent mean, standardized per latent by
    its variance over the whole test set, then grouped by active factor."""
    if not batches:
        raise ContractError("need at least one batch")
    mus = [encode_mu(net, b.images) for b in batches]
    pooled = np.concatenate(mus, axis=0)
    global_var = pooled.var(axis=0)
    global_var = np.maximum(global_var, 1e-12)

    by_factor: dict[str, list[np.ndarray]] = {}
    for batch, mu in zip(batches, mus):
        by_factor.setdefault(batch.active_factor, []).append(mu.var(axis=0) / global_var)

    extrinsic_idx = {name: layout.index_of(name) for name in layout.factor_names}
    lo, hi = layout.intrinsic_range
    factors = list(by_factor)
    active: dict[str, float] = {}
    inactive: dict[str, float] = {}
    ratio: dict[str, float] = {}
    per_latent: dict[str, np.ndarray] = {}
    for factor, rows in by_factor.items():
        mean_var = np.mean(rows, axis=0)
        per_latent[factor] = mean_var
        if factor == "intrinsic":
            act = float(mean_var[lo:hi].mean()) if hi > lo else float("nan")
            others = list(extrinsic_idx.values())
        else:
            act = float(mean_var[extrinsic_idx[factor]])
            others = [i for n, i in extrinsic_idx.items() if n != factor]
        inact = float(np.mean([mean_var[i] for i in others])) if others else float("nan")
        active[factor] = act
        inactive[factor] = inact
        ratio[factor] = inact / act if act > 0 else float("inf")
    return InvarianceReport(factors, active, inactive, ratio, per_latent)


def latent_sweep_render(
    net: Network,
    layout: LatentLayout,
    image: np.ndarray,
    index: int,
    value_range: tuple[float, float] = (-15.0, 15.0),
    steps: int = 9,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Encode once (posterior mean, no noise), vary one code entry linearly
    over ``value_range``, decode each code.

    With ``steps == 1`` the entry keeps its encoded value, so the output is
    the plain mean reconstruction. Returns (codes, images).
    """
    if not 0 <= index < layout.total_dim:
        raise ContractError(f"latent index {index} out of range [0, {layout.total_dim})")
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    mu, _, _ = encode_batch(net, image[None] if image.ndim == 3 else image)
    base = mu[0]
    if steps == 1:
        values = np.array([base[index]])
    else:
        values = np.linspace(value_range[0], value_range[1], steps)
    codes = np.repeat(base[None, :], steps, axis=0)
    codes[:, index] = values
    images = [decode(net, codes[i])[0] for i in range(steps)]
    return codes, images


def identify_entangled_latent(net, batch: TransformBatch) -> int:
    """Index of the latent with the largest mean-variance over an
    azimuth-varied batch; ties break to the lowest index."""
    if batch.images.shape[0] < 2:
        raise ContractError("batch must contain at least 2 examples")
    mu = encode_mu(net, batch.images)
    variances = mu.var(axis=0)
    return int(np.argmax(variances))


def reconstruction_mse(net: Network, images: np.ndarray) -> float:
    """Held-out per-pixel MSE of the mean reconstruction."""
    mu, _, _ = encode_batch(net, images)
    total = 0.0
    for i in range(images.shape[0]):
        x_hat, _ = decode(net, mu[i])
        diff = x_hat.astype(np.float64) - images[i].astype(np.float64)
        total += float(np.mean(diff * diff))
    return total / images.shape[0]


def compare_novel_view(
    model_net: Network,
    baseline_net: Network,
    layout: LatentLayout,
    scenes: list[SceneParams],
    azimuth_targets: list[float],
    resolution: int,
    baseline_azimuth_index: int,
) -> NovelViewReport:
    """Re-render each scene at each target azimuth with both networks.

    The azimuth code value is transferred from a reference image rendered at
    the target azimuth (encode it, read off the azimuth latent); the result
    is scored as per-pixel MSE against the ground-truth render.
    """
    model_idx = layout.index_of("azimuth")
    rows: list[tuple[int, float, float, float]] = []
    model_total = 0.0
    base_total = 0.0
    for case, params in enumerate(scenes):
        source = render(params, resolution)
        for target in azimuth_targets:
            truth = render(params.replace(azimuth=float(target)), resolution)
            mses = []
            for net, idx in ((model_net, model_idx), (baseline_net, baseline_azimuth_index)):
                mu_src, _, _ = encode_batch(net, source[None])
                mu_ref, _, _ = encode_batch(net, truth[None])
                code = mu_src[0].copy()
                code[idx] = mu_ref[0][idx]
                x_hat, _ = decode(net, code)
                diff = x_hat.astype(np.float64) - truth.astype(np.float64)
                mses.append(float(np.mean(diff * diff)))
            rows.append((case, float(target), mses[0], mses[1]))
            model_total += mses[0]
            base_total += mses[1]
    n = len(rows)
    if n == 0:
        raise ContractError("no (scene, target) pairs to evaluate")
    return NovelViewReport(rows, model_total / n, base_total / n)
