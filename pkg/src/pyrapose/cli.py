"""Command-line interface.

Subcommands: synth-data, train, eval, bench, quantstudy, rootnoise,
gradcheck.  Every stochastic command takes --seed and is deterministic
for a fixed seed; machine-readable results go to --out as CSV, human
summaries to stdout.  Exit status: 0 success, 1 validation failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from .camera import CameraModel
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, apply_assignments, load_config, \
    parse_assignments
from .heads import soft_argmax_backward, soft_argmax_plane
from .network import NetworkConfig, forward_full, init_model, \
    prediction_positions
from .synthetic import default_camera, generate_dataset, load_dataset, \
    save_dataset
from .tensor import Tensor, finite_diff_check
from .training import total_loss, train

__all__ = ["main"]

GRADCHECK_THRESHOLD = 1e-5


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = parse_assignments(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return apply_assignments(cfg, overrides)


def _write_csv(path: str, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) for h in header) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cmd_synth_data(args) -> int:
    cfg = _resolve_config(args)
    if cfg.input_h != cfg.input_w:
        raise ConfigError("synth-data renders square canvases; set "
                          "input_h == input_w")
    cam = default_camera(cfg.input_w)
    samples = generate_dataset(args.count, cfg.seed, cam,
                               depth2d_fraction=cfg.depth2d_fraction)
    save_dataset(samples, args.out)
    n2d = sum(1 for s in samples if not s.has_depth)
    print(f"wrote {len(samples)} samples ({n2d} without depth) to "
          f"{args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    result = train(
        cfg.network(), steps=cfg.steps, batch_size=cfg.batch_size,
        lr=cfg.lr, seed=cfg.seed, train_size=cfg.train_size,
        val_size=cfg.val_size, val_interval=cfg.val_interval,
        augment_data=cfg.augment, depth2d_fraction=cfg.depth2d_fraction,
        rotation_max_deg=cfg.rotation_max_deg,
        scale_range=(cfg.scale_min, cfg.scale_max),
        gain_range=(cfg.brightness_min, cfg.brightness_max),
        log=print)
    save_checkpoint(result.model, args.checkpoint_out)
    print(f"saved checkpoint to {args.checkpoint_out} "
          f"(step {result.model.step})")
    if args.out:
        _write_csv(args.out, ["step", "k", "l", "err2d", "errz"],
                   result.metrics)
        print(f"wrote metrics log to {args.out}")
    print(f"validation 2D error: initial {result.initial_err2d:.5f}, "
          f"final {result.final_err2d:.5f}")
    return 0


def _load_model(args):
    try:
        return load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"missing checkpoint: {args.checkpoint}")


def _eval_samples(args, cfg: RunConfig, model_config: NetworkConfig):
    if args.data:
        try:
            samples = load_dataset(args.data)
        except FileNotFoundError:
            raise ConfigError(f"missing dataset: {args.data}")
    else:
        h, w = model_config.input_size
        samples = generate_dataset(cfg.eval_size, cfg.seed + 17,
                                   default_camera(w))
    return samples


_EVAL_COLUMNS = ["k", "l", "err2d", "errz", "mpjpe_mm", "pck150", "auc",
                 "flops"]
_BENCH_COLUMNS = _EVAL_COLUMNS + ["latency_ms", "warmup", "reps"]


def _print_reports(reports) -> None:
    print(f"{'k':>3} {'l':>3} {'err2d':>9} {'mpjpe_mm':>9} {'pck150':>7} "
          f"{'auc':>7} {'mflops':>9}")
    for r in reports:
        print(f"{r.k:>3} {r.l:>3} {r.err2d:>9.5f} {r.mpjpe_mm:>9.2f} "
              f"{r.pck150:>7.3f} {r.auc:>7.3f} {r.flops / 1e6:>9.1f}")


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    model = _load_model(args)
    samples = _eval_samples(args, cfg, model.config)
    reports = bench_mod.evaluate_model(model, samples, cfg.batch_size)
    _print_reports(reports)
    if args.out:
        _write_csv(args.out, _EVAL_COLUMNS,
                   [r.as_dict() for r in reports])
        print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    model = _load_model(args)
    samples = _eval_samples(args, cfg, model.config)
    reports = bench_mod.anytime_sweep(
        model, samples, cfg.batch_size,
        warmup=args.warmup if args.warmup is not None else cfg.bench_warmup,
        reps=args.reps if args.reps is not None else cfg.bench_reps)
    _print_reports(reports)
    for r in reports:
        print(f"  cut (k={r.k}, l={r.l}): {r.latency_ms:.2f} ms "
              f"(median of {r.reps} after {r.warmup} warmup)")
    if args.out:
        _write_csv(args.out, _BENCH_COLUMNS,
                   [r.as_dict() for r in reports])
        print(f"wrote {args.out}")
    return 0


def _cmd_quantstudy(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows = bench_mod.quantization_study(samples=args.samples, rng=rng)
    for row in rows:
        print(f"s={row['s']:>3}  argmax {row['argmax_mm']:7.1f} mm   "
              f"soft-argmax {row['softargmax_mm']:7.1f} mm")
    if args.out:
        _write_csv(args.out, ["s", "argmax_mm", "softargmax_mm"], rows)
        print(f"wrote {args.out}")
    return 0


def _cmd_rootnoise(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    px = args.image_px
    cam = CameraModel(fx=args.focal, fy=args.focal, cx=px / 2, cy=px / 2,
                      image_size=(px, px), root_depth=args.root_depth)
    rows = bench_mod.root_noise_experiment(cam, trials=args.trials, rng=rng)
    for row in rows:
        print(f"sigma={row['sigma']:>6.1f} mm  increase "
              f"{row['mean_increase_mm']:7.3f} mm")
    if args.out:
        _write_csv(args.out, ["sigma", "mean_increase_mm"], rows)
        print(f"wrote {args.out}")
    return 0


def _gradcheck_battery(seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0

    # Closed-form soft-argmax derivative against central differences.
    plane = rng.normal(size=(8, 8))
    for upstream in ((1.0, 0.0), (0.0, 1.0), (0.7, -0.3)):
        analytic = soft_argmax_backward(plane, upstream)
        step = 1e-6
        for i in range(8):
            for j in range(8):
                p = plane.copy()
                p[i, j] += step
                up = np.dot(upstream, soft_argmax_plane(p))
                p[i, j] -= 2 * step
                dn = np.dot(upstream, soft_argmax_plane(p))
                numeric = (up - dn) / (2 * step)
                denom = max(abs(analytic[i, j]), abs(numeric), 1e-12)
                worst = max(worst, abs(analytic[i, j] - numeric) / denom)

    # Whole-network check on a miniature 64-bit model, probing the image
    # and a sample of coordinates of every parameter tensor.
    config = NetworkConfig(
        pyramids=2, levels=1, joints=3, features=8, input_size=(32, 32),
        entry_channels=(4, (4, 6), (6, 8), (8, 8)), precision="f64")
    model = init_model(config, seed=seed)
    image = Tensor(rng.uniform(0, 1, size=(1, 32, 32, 3)), dtype=np.float64)
    pose_gt = rng.uniform(0.2, 0.8, size=(1, 3, 3))
    mask = np.ones((1, 3, 3))
    conf_gt = np.ones((1, 3, 1))

    def loss_for_image(img):
        preds = forward_full(img, model, stats="batch")
        return total_loss(preds, pose_gt, mask, conf_gt)

    worst = max(worst, finite_diff_check(loss_for_image, image, sample=24,
                                         rng=rng))

    for path in model.parameter_paths()[::3]:
        original = model.params[path]

        def loss_for_param(p, _path=path):
            model.params[_path] = p
            try:
                preds = forward_full(image, model, stats="batch")
                return total_loss(preds, pose_gt, mask, conf_gt)
            finally:
                model.params[_path] = original

        worst = max(worst, finite_diff_check(loss_for_param, original,
                                             sample=4, rng=rng))
    return worst


def _cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 7
    worst = _gradcheck_battery(seed)
    print(f"max relative error: {worst:.3e} "
          f"(threshold {GRADCHECK_THRESHOLD:g})")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyrapose",
        description="Anytime multi-scale pyramid network for 3D keypoint "
                    "regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train on synthetic data")
    _add_config_args(p)
    p.add_argument("--checkpoint-out", default="model.ckpt")
    p.add_argument("--out", help="metrics log CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset cache (generated when absent)")
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="anytime accuracy/speed sweep")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("quantstudy", help="grid quantization study")
    p.add_argument("--samples", type=int, default=200000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=_cmd_quantstudy)

    p = sub.add_parser("rootnoise", help="root-depth noise robustness")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--focal", type=float, default=1150.0)
    p.add_argument("--root-depth", type=float, default=5000.0)
    p.add_argument("--image-px", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="CSV output")
    p.set_defaults(func=_cmd_rootnoise)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
