"""Command-line entry points.

Subcommands: gen-data, train, eval, sweep, serve. Every run is reproducible
from its --seed; no wall-clock or environment state reaches any output file.
Reports are delimited text with figures rendered next to them.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import SceneCodeError
from .evaluation import (
    compare_novel_view,
    equivariance_from_batches,
    identify_entangled_latent,
    invariance_score,
    latent_sweep_render,
    reconstruction_mse,
)
from .imaging import read_png, write_png
from .network import LatentLayout, build_network, default_config
from .optim import RmspropHyper
from .scene import SCENE_KINDS
from .training import DEFAULT_RATIO, TrainConfig, train

AZIMUTH_WINDOW = (-60.0, 60.0)

_RATIO_ORDERS = {
    "head": ("azimuth", "elevation", "light_azimuth", "intrinsic"),
    "chair": ("azimuth", "intrinsic"),
}
_DEFAULT_RATIOS = {"head": "1:1:1:10", "chair": "1:10"}


def _parse_ratio(text: str, kind: str) -> dict[str, float]:
    order = _RATIO_ORDERS[kind]
    parts = text.split(":")
    if len(parts) != len(order):
        raise SceneCodeError(
            f"ratio {text!r} needs {len(order)} entries for {kind} scenes ({':'.join(order)})"
        )
    try:
        weights = [float(p) for p in parts]
    except ValueError:
        raise SceneCodeError(f"ratio {text!r} is not numeric")
    return dict(zip(order, weights))


def _layout_for(kind: str, latent_dim: int) -> LatentLayout:
    factors = ("azimuth",) if kind == "chair" else ("azimuth", "elevation", "light_azimuth")
    return LatentLayout.default(total_dim=latent_dim, factors=factors)


def cmd_gen_data(args) -> int:
    kind = args.scene
    ratio = _parse_ratio(args.ratio or _DEFAULT_RATIOS[kind], kind)
    rng = np.random.default_rng(args.seed)
    info = datamod.make_dataset(
        rng,
        n_batches=args.batches,
        mix=ratio,
        resolution=args.resolution,
        path=args.out,
        batch_size=args.batch_size,
        kind=kind,
    )
    print(f"wrote {info.n_batches} batches at {info.resolution}x{info.resolution} to {args.out}")
    return 0


_CONFIG_KEYS = {
    "steps": int,
    "seed": int,
    "mode": str,
    "reconstruction": str,
    "invariance_scale": float,
    "checkpoint_every": int,
    "latent_dim": int,
    "ratio": str,
    "learning_rate": float,
    "sq_decay": float,
    "weight_decay": float,
    "epsilon": float,
}


def _read_config_file(path) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SceneCodeError(f"{path}:{ln}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _CONFIG_KEYS:
                raise SceneCodeError(f"{path}:{ln}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](raw)
            except ValueError:
                raise SceneCodeError(f"{path}:{ln}: bad value for {key}: {raw!r}")
    return values


def _build_train_config(args) -> tuple[TrainConfig, datamod.DatasetInfo]:
    info = datamod.read_info(args.data)
    file_values = _read_config_file(args.config) if args.config else {}

    def pick(name, flag_value, default):
        if flag_value is not None:
            return flag_value
        return file_values.get(name, default)

    steps = pick("steps", args.steps, 1000)
    seed = pick("seed", args.seed, 0)
    mode = pick("mode", args.mode, "disentangled")
    recon = pick("reconstruction", args.reconstruction, "bernoulli")
    scale = pick("invariance_scale", args.invariance_scale, 0.01)
    every = pick("checkpoint_every", args.checkpoint_every, 0)
    latent_dim = pick("latent_dim", args.latent_dim, 16)
    ratio_text = pick("ratio", args.ratio, _DEFAULT_RATIOS[info.kind])
    hyper = RmspropHyper(
        learning_rate=pick("learning_rate", args.learning_rate, 0.0005),
        sq_decay=pick("sq_decay", args.sq_decay, 0.1),
        weight_decay=pick("weight_decay", args.weight_decay, 0.01),
        epsilon=pick("epsilon", args.epsilon, 1e-8),
    )
    net_config = default_config(
        resolution=info.resolution,
        layout=_layout_for(info.kind, latent_dim),
        seed=seed,
    )
    config = TrainConfig(
        network=net_config,
        ratio=_parse_ratio(ratio_text, info.kind),
        invariance_scale=scale,
        optimizer=hyper,
        steps=steps,
        seed=seed + 1,  # decorrelates noise draws from parameter init
        mode=mode,
        reconstruction=recon,
        checkpoint_every=every,
    )
    return config, info


def cmd_train(args) -> int:
    config, info = _build_train_config(args)
    metrics_path = args.metrics or f"{args.out}.metrics.tsv"
    Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
    Path(metrics_path).write_text("", encoding="utf-8")  # fresh log per run

    def snapshot(result):
        ckpt = Checkpoint.of(
            result.network,
            step_count=result.steps_done,
            optimizer=result.optim_state,
            rng=result.rng,
        )
        save_checkpoint(args.out, ckpt)

    result = train(
        config,
        datamod.read_batches(args.data),
        metrics_path=metrics_path,
        on_checkpoint=snapshot if config.checkpoint_every else None,
    )
    snapshot(result)
    if args.curves:
        from .figures import save_training_curves

        save_training_curves(metrics_path, args.curves)
    note = " (data exhausted)" if result.exhausted else ""
    print(f"trained {result.steps_done} steps{note}; checkpoint at {args.out}")
    return 0


def _write_tsv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def cmd_eval(args) -> int:
    from .figures import save_equivariance_figure, save_invariance_figure

    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.network()
    layout = net.layout
    batches = datamod.load_batches(args.data)
    if not batches:
        raise SceneCodeError(f"{args.data}: dataset holds no batches")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    # Equivariance: pooled (truth, latent mean) pairs per extrinsic factor.
    reports = []
    eq_rows = []
    pair_rows = []
    for factor in layout.factor_names:
        have = [b for b in batches if b.active_factor == factor]
        if not have:
            continue
        rep = equivariance_from_batches(net, layout, factor, have)
        reports.append(rep)
        eq_rows.append([factor, "full", rep.truth.size, rep.pearson_r, rep.spearman_rho, rep.degenerate])
        for t, m in zip(rep.truth, rep.inferred):
            pair_rows.append([factor, float(t), float(m)])
        if factor == "azimuth":
            win = equivariance_from_batches(net, layout, factor, have, window=AZIMUTH_WINDOW)
            eq_rows.append(
                ["azimuth", f"{AZIMUTH_WINDOW[0]}..{AZIMUTH_WINDOW[1]}", win.truth.size,
                 win.pearson_r, win.spearman_rho, win.degenerate]
            )
    _write_tsv(out / "equivariance.tsv", ["factor", "window", "n", "pearson_r", "spearman_rho", "degenerate"], eq_rows)
    _write_tsv(out / "equivariance_pairs.tsv", ["factor", "truth", "inferred"], pair_rows)
    save_equivariance_figure(reports, out / "equivariance.png")

    # Invariance: standardized within-batch variances.
    inv = invariance_score(net, layout, batches)
    inv_rows = []
    for factor in inv.factors:
        for i, v in enumerate(inv.per_latent[factor]):
            inv_rows.append([factor, i, float(v)])
    _write_tsv(out / "invariance.tsv", ["active_factor", "latent", "std_variance"], inv_rows)
    summary_rows = [
        [f, inv.active_variance[f], inv.inactive_extrinsic_variance[f], inv.ratio[f]]
        for f in inv.factors
    ]
    _write_tsv(out / "invariance_summary.tsv", ["active_factor", "active", "inactive_extrinsic", "ratio"], summary_rows)
    save_invariance_figure(inv, out / "invariance.png")

    # Reconstruction MSE over a pooled sample of test images.
    images = np.concatenate([b.images for b in batches])[: args.recon_images]
    rows = [["reconstruction_mse", reconstruction_mse(net, images)]]

    # Novel-view comparison when a baseline checkpoint is supplied.
    if args.baseline:
        base_net = load_checkpoint(args.baseline).network()
        az_batches = [b for b in batches if b.active_factor == "azimuth"]
        if not az_batches:
            raise SceneCodeError("novel-view comparison needs azimuth batches in the dataset")
        baseline_idx = identify_entangled_latent(base_net, az_batches[0])
        scenes = [b.params[0] for b in batches if b.active_factor == "intrinsic"][: args.novel_scenes]
        if not scenes:
            scenes = [az_batches[0].params[0]]
        targets = [float(t) for t in rng.uniform(*AZIMUTH_WINDOW, size=args.novel_targets)]
        nv = compare_novel_view(
            net, base_net, layout, scenes, targets, net.config.resolution, baseline_idx
        )
        _write_tsv(
            out / "novel_view.tsv",
            ["case", "target_azimuth", "model_mse", "baseline_mse"],
            [list(r) for r in nv.rows],
        )
        rows.append(["novel_view_model_mse", nv.model_mean_mse])
        rows.append(["novel_view_baseline_mse", nv.baseline_mean_mse])
        rows.append(["baseline_azimuth_latent", baseline_idx])

    _write_tsv(out / "summary.tsv", ["metric", "value"], rows)
    for metric, value in rows:
        print(f"{metric}\t{value}")
    return 0


def cmd_sweep(args) -> int:
    from .figures import save_image_grid

    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.network()
    image = read_png(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codes, images = latent_sweep_render(
        net,
        net.layout,
        image,
        index=args.index,
        value_range=(args.range_from, args.range_to),
        steps=args.steps,
    )
    for i, img in enumerate(images):
        write_png(out / f"sweep_{i:03d}.png", img)
    _write_tsv(
        out / "codes.tsv",
        ["step"] + [f"z{i}" for i in range(codes.shape[1])],
        [[i] + [float(v) for v in codes[i]] for i in range(codes.shape[0])],
    )
    save_image_grid(images, out / "grid.png", titles=[f"{codes[i, args.index]:.2f}" for i in range(len(images))])
    print(f"wrote {len(images)} frames to {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.network()
    print(f"serving on port {args.port} (latent_dim={net.layout.total_dim})")
    serve(net, port=args.port, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenecode", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a dataset of single-factor batches")
    g.add_argument("--out", required=True)
    g.add_argument("--batches", type=int, required=True)
    g.add_argument("--batch-size", type=int, default=20)
    g.add_argument("--resolution", type=int, default=32)
    g.add_argument("--ratio", default=None, help="factor mix, e.g. 1:1:1:10")
    g.add_argument("--scene", choices=SCENE_KINDS, default="head")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a checkpoint from a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="flat key = value file; flags override")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--mode", choices=("disentangled", "baseline"), default=None)
    t.add_argument("--reconstruction", choices=("bernoulli", "mse"), default=None)
    t.add_argument("--invariance-scale", type=float, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--latent-dim", type=int, default=None)
    t.add_argument("--ratio", default=None)
    t.add_argument("--learning-rate", type=float, default=None)
    t.add_argument("--sq-decay", type=float, default=None)
    t.add_argument("--weight-decay", type=float, default=None)
    t.add_argument("--epsilon", type=float, default=None)
    t.add_argument("--metrics", default=None, help="metrics log path (default <out>.metrics.tsv)")
    t.add_argument("--curves", default=None, help="also render loss curves to this PNG")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="write evaluation reports and figures")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--baseline", default=None, help="plain-trained checkpoint to compare against")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--recon-images", type=int, default=200)
    e.add_argument("--novel-scenes", type=int, default=5)
    e.add_argument("--novel-targets", type=int, default=4)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="re-render an image along one latent")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--from", dest="range_from", type=float, default=-15.0)
    s.add_argument("--to", dest="range_to", type=float, default=15.0)
    s.add_argument("--steps", type=int, default=9)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--port", type=int, default=8000)
    v.add_argument("--host", default="0.0.0.0")
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SceneCodeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
