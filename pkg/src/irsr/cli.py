"""Command-line surface: ``irsr train | sr | eval | report | ablate``.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files, shape mismatches), 3 numeric error (non-finite values).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import ImageBuffer, load_dataset_dir, load_image, save_image
from .errors import ArgumentError, DimensionError, ImageParseError, NumericError
from .metrics import RESIDUAL_BIN_LABELS, residual_distribution
from .model import ModelConfig, load_checkpoint, param_count
from .training import (
    TrainConfig,
    build_dataset,
    evaluate_bicubic,
    evaluate_model,
    parse_config_file,
    super_resolve,
    train,
)

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="irsr", description="Infrared image super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True, help="flat key = value config file")
    p_train.add_argument("--scale", type=int, choices=(2, 4))
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--lambda", dest="lambda_loss", type=float)
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--out", help="output directory (overrides config)")

    p_sr = sub.add_parser("sr", help="super-resolve one image with a checkpoint")
    p_sr.add_argument("checkpoint")
    p_sr.add_argument("input", help="input PGM/PPM image")
    p_sr.add_argument("--out", required=True, help="output image path")

    p_eval = sub.add_parser("eval", help="score a checkpoint over a dataset directory")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset", help="directory with hr/ and lr_x{scale}/")
    p_eval.add_argument("--border-crop", type=int, default=0)
    p_eval.add_argument("--quantize", action="store_true", help="round SR output to 8 bits first")
    p_eval.add_argument("--baseline", action="store_true", help="also score bicubic upsampling")
    p_eval.add_argument("--out", help="write the table and key = value summary here")

    p_rep = sub.add_parser("report", help="residual error distribution between two directories")
    p_rep.add_argument("sr_dir")
    p_rep.add_argument("gt_dir")
    p_rep.add_argument("--out", help="write the table here")

    p_abl = sub.add_parser("ablate", help="run a small grid over one axis")
    p_abl.add_argument("--axis", required=True, choices=("blocks", "loss", "lr"))
    p_abl.add_argument("--grid", required=True, help="comma-separated values")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--out", help="output directory (overrides config)")

    return parser


def _load_config(args):
    train_cfg, model_cfg = parse_config_file(args.config)
    overrides = {}
    for key in ("scale", "seed", "lambda_loss", "iterations"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if overrides:
        items = {f: getattr(train_cfg, f) for f in TrainConfig.__dataclass_fields__}
        items.update(overrides)
        train_cfg = TrainConfig(**items)
        model_items = {f: getattr(model_cfg, f) for f in ModelConfig.__dataclass_fields__}
        model_items["scale"] = train_cfg.scale
        model_items["lambda_loss"] = train_cfg.lambda_loss
        model_cfg = ModelConfig(**model_items)
    return train_cfg, model_cfg


def _cmd_train(args, out):
    train_cfg, model_cfg = _load_config(args)
    dataset = build_dataset(train_cfg)
    out(f"training on {len(dataset)} pairs, scale x{train_cfg.scale}, "
        f"{train_cfg.iterations} iterations, seed {train_cfg.seed}")
    result = train(train_cfg, model_cfg, dataset, log=out)
    if result.halted_at is not None:
        raise NumericError(f"training halted at iteration {result.halted_at} (non-finite loss)")
    out(f"final loss {result.final_total:.6f}")
    out(f"loss record: {result.loss_log}")
    out(f"checkpoint: {result.checkpoints[-1]}")
    return 0


def _cmd_sr(args, out):
    state = load_checkpoint(args.checkpoint)
    image = load_image(args.input)
    sr = super_resolve(state, image)
    rounded = np.rint(np.clip(sr, 0.0, 255.0)).astype(np.uint8)
    buf = ImageBuffer(data=rounded, colorspace=image.colorspace)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_image(buf, args.out)
    out(f"{args.input} ({image.height}x{image.width}) -> {args.out} "
        f"({buf.height}x{buf.width})")
    return 0


def _cmd_eval(args, out):
    state = load_checkpoint(args.checkpoint)
    dataset = load_dataset_dir(args.dataset, state.config.scale)
    report = evaluate_model(
        state, dataset, border_crop=args.border_crop, quantize=args.quantize
    )
    out(report.to_table())
    if args.baseline:
        base = evaluate_bicubic(dataset, border_crop=args.border_crop)
        out("")
        out(f"bicubic baseline: psnr {base.psnr_mean:.4f}  "
            f"mse {base.mse_mean:.4f}  ssim {base.ssim_mean:.4f}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_keyvalues() + "\n")
        path.with_suffix(path.suffix + ".table").write_text(report.to_table() + "\n")
        out(f"summary written to {path}")
    return 0


def _list_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise ArgumentError(f"{directory}: not a directory")
    files = {p.name: p for p in sorted(d.iterdir()) if p.suffix in (".pgm", ".ppm")}
    if not files:
        raise ArgumentError(f"{directory}: no PGM/PPM images")
    return files


def _cmd_report(args, out):
    sr_files = _list_images(args.sr_dir)
    gt_files = _list_images(args.gt_dir)
    missing = sorted(set(gt_files) - set(sr_files))
    if missing:
        raise ArgumentError(f"no SR counterpart for {missing[0]}")

    header = f"{'name':<24}" + "".join(f"{lbl:>18}" for lbl in RESIDUAL_BIN_LABELS)
    lines = [header]
    all_bins = []
    for name, gt_path in gt_files.items():
        gt = load_image(gt_path).data.astype(np.float64)
        sr = load_image(sr_files[name]).data.astype(np.float64)
        bins = residual_distribution(sr, gt)
        all_bins.append(bins)
        lines.append(f"{Path(name).stem:<24}" + "".join(f"{100 * b:>17.2f}%" for b in bins))
    mean = np.mean(all_bins, axis=0)
    lines.append(f"{'mean':<24}" + "".join(f"{100 * b:>17.2f}%" for b in mean))
    text = "\n".join(lines)
    out(text)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    return 0


def _parse_grid(axis, grid):
    try:
        if axis == "blocks":
            return [int(v) for v in grid.split(",") if v.strip()]
        return [float(v) for v in grid.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {grid!r} for axis {axis}") from None


def _cmd_ablate(args, out):
    train_cfg, model_cfg = _load_config(args)
    values = _parse_grid(args.axis, args.grid)
    if not values:
        raise UsageError("empty grid")
    dataset = build_dataset(train_cfg)
    out_root = Path(args.out or train_cfg.out_dir)

    rows = []
    for value in values:
        tc = {f: getattr(train_cfg, f) for f in TrainConfig.__dataclass_fields__}
        mc = {f: getattr(model_cfg, f) for f in ModelConfig.__dataclass_fields__}
        if args.axis == "blocks":
            mc["n_blocks"] = value
            tag = f"blocks_{value}"
        elif args.axis == "loss":
            tc["lambda_loss"] = value
            mc["lambda_loss"] = value
            tag = f"lambda_{value:g}"
        else:
            tc["lr"] = value
            tag = f"lr_{value:g}"
        run_dir = out_root / tag
        result = train(TrainConfig(**tc), ModelConfig(**mc), dataset, out_dir=run_dir)
        psnr_mean = evaluate_model(result.state, dataset).psnr_mean
        rows.append((tag, param_count(ModelConfig(**mc)), result.final_total, psnr_mean))
        out(f"{tag}: done ({run_dir})")

    lines = [f"{'run':<16}{'params':>10}{'final_loss':>14}{'psnr':>10}"]
    for tag, n_par, loss, p in rows:
        lines.append(f"{tag:<16}{n_par:>10}{loss:>14.6f}{p:>10.4f}")
    text = "\n".join(lines)
    out(text)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / f"ablate_{args.axis}.txt").write_text(text + "\n")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sr": _cmd_sr,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "ablate": _cmd_ablate,
}


def main(argv=None, out=print):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command (train, sr, eval, report, ablate)")
        return _COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ImageParseError, ArgumentError, DimensionError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
