"""Command-line interface: training, enhancement, diagnostics, evaluation.

Subcommands:
  gen-synthetic   write a seeded procedural dataset
  train           train both stages on a paired dataset
  enhance         run a trained checkpoint over images
  diagnose-swap   amplitude/phase swap experiment on one image pair
  roundtrip-loss  repeated FFT round-trip error curve
  evaluate        full-reference metrics between two image directories
  ablate          one training run per ablation toggle

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import fourier
from . import metrics
from . import synthetic
from . import training
from .checkpoint import CheckpointError, load_checkpoint
from .data import (DataError, load_dataset, luminance_of, read_image,
                   sha256_file, write_image)
from .tensor import NumericError, Tensor, clip01

logger = logging.getLogger("fourlight")


class UsageError(ValueError):
    """Bad command line or configuration input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------

# section -> config fields allowed there
_CONFIG_SECTIONS = {
    "model": ["c1", "c", "la_width", "leaky_slope", "la_eps", "la_clamp", "init"],
    "training": ["crop", "batch", "lr", "iters", "seed", "milestones",
                 "lr_decay", "checkpoint_every"],
    "loss": ["lambda1", "lambda2", "lambda3", "lambda4"],
    "ablation": sorted(training.ABLATION_TOGGLES.values()),
}
_LOSS_FIELDS = {"lambda1": "l1", "lambda2": "l2", "lambda3": "l3", "lambda4": "l4"}


def parse_config(path):
    """Read a sectioned key=value config file into a TrainConfig.

    Unknown sections or keys are errors, which catches typos in ablation
    toggle names before a long run starts.
    """
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from exc

    cfg = training.TrainConfig()
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SECTIONS[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            _apply_config_value(cfg, section, key, raw, path)
    return cfg


def _apply_config_value(cfg, section, key, raw, path):
    try:
        if section == "loss":
            setattr(cfg.weights, _LOSS_FIELDS[key], float(raw))
        elif key == "milestones":
            cfg.milestones = tuple(float(v) for v in raw.split(",") if v.strip())
        elif key == "init":
            if raw not in ("train", "random"):
                raise ValueError(f"init must be 'train' or 'random', got {raw!r}")
            cfg.init = raw
        elif section == "ablation":
            setattr(cfg, key, _parse_bool(raw))
        else:
            current = getattr(cfg, key)
            setattr(cfg, key, type(current)(raw) if not isinstance(current, float)
                    else float(raw))
    except ValueError as exc:
        raise UsageError(f"{path}: bad value for {key}: {exc}") from exc


def _parse_bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def write_manifest(out_dir, command, config, inputs, outputs, seed=None):
    manifest = {
        "tool": "fourlight",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "input_digests": {p: sha256_file(p) for p in inputs if os.path.isfile(p)},
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args):
    names = synthetic.generate_dataset(args.out, pairs=args.pairs,
                                       size=args.size, seed=args.seed)
    write_manifest(args.out, "gen-synthetic",
                   {"pairs": args.pairs, "size": args.size}, [],
                   [os.path.join(sub, n) for sub in ("low", "gt") for n in names],
                   seed=args.seed)
    print(f"wrote {len(names)} pairs to {args.out}")
    return 0


def cmd_train(args):
    cfg = parse_config(args.config)
    pairs = load_dataset(args.data)
    logger.info("training on %d pairs for %d iterations", len(pairs), cfg.iters)
    result = training.train(cfg, pairs, out_dir=args.out,
                            progress=_progress_logger(cfg.iters))
    outputs = [os.path.join(args.out, "log.jsonl"),
               os.path.join(args.out, "checkpoint.bin")]
    write_manifest(args.out, "train", cfg.as_dict(), [args.config], outputs,
                   seed=cfg.seed)
    final = result.log[-1]
    print(f"final loss {final['total']:.6f} after {cfg.iters} iterations")
    return 0


def _progress_logger(total):
    step = max(1, total // 10)

    def progress(record):
        if record["iteration"] % step == 0 or record["iteration"] == total - 1:
            logger.info("iter %d: total %.5f lr %.2e",
                        record["iteration"], record["total"], record["lr"])

    return progress


def _load_networks(checkpoint_path):
    if not os.path.isfile(checkpoint_path):
        raise UsageError(f"checkpoint not found: {checkpoint_path}")
    manifest, params = load_checkpoint(checkpoint_path)
    return training.restore_networks(manifest, params)


def _input_images(path):
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
        if not names:
            raise DataError(f"{path}: no PNG files")
        return [(n, os.path.join(path, n)) for n in names]
    if not os.path.isfile(path):
        raise DataError(f"input not found: {path}")
    return [(os.path.basename(path), path)]


def cmd_enhance(args):
    cfg, net1, net2 = _load_networks(args.checkpoint)
    inputs = _input_images(args.input)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for name, path in inputs:
        rgb = read_image(path)
        if rgb.shape[1] % 4 or rgb.shape[2] % 4:
            raise DataError(f"{name}: size {rgb.shape[1]}x{rgb.shape[2]} "
                            "not divisible by 4")
        ir_path = os.path.join(args.ir, name) if args.ir else None
        if ir_path and os.path.isfile(ir_path):
            infrared = read_image(ir_path, grayscale=True)
        else:
            infrared = luminance_of(rgb)
        i_low = Tensor(rgb[None])
        i_inf = Tensor(infrared[None])
        i_s1, final, _ = training.forward_pipeline(i_low, i_inf, cfg, net1, net2)
        out_path = os.path.join(args.out, name)
        write_image(out_path, clip01(final))
        outputs.append(out_path)
        if args.save_stage1 and i_s1 is not None:
            s1_path = os.path.join(args.out, name[:-4] + "_s1.png")
            write_image(s1_path, clip01(i_s1))
            outputs.append(s1_path)
        if args.float_dump:
            dump = os.path.join(args.out, name[:-4] + "_raw.npy")
            np.save(dump, final.data)
            outputs.append(dump)
    write_manifest(args.out, "enhance", cfg.as_dict(),
                   [args.checkpoint] + [p for _, p in inputs], outputs,
                   seed=cfg.seed)
    print(f"enhanced {len(inputs)} image(s) into {args.out}")
    return 0


def cmd_diagnose_swap(args):
    low = Tensor(read_image(args.low)[None])
    gt = Tensor(read_image(args.gt)[None])
    if low.shape != gt.shape:
        raise DataError(f"size mismatch: low {low.shape} vs gt {gt.shape}")
    i_a = fourier.swap_components(low, gt, "amplitude")
    i_b = fourier.swap_components(low, gt, "phase")
    roundtrip = fourier.ifft2(fourier.fft2(gt))

    os.makedirs(args.out, exist_ok=True)
    outputs = []

    def emit_png(name, image):
        path = os.path.join(args.out, name)
        write_image(path, image)
        outputs.append(path)

    emit_png("i_a.png", i_a.image)
    emit_png("i_b.png", i_b.image)
    emit_png("diff_a.png", metrics.diff_map(i_a.image, gt))
    emit_png("diff_b.png", metrics.diff_map(i_b.image, gt))

    for name, swapped in (("hist_diff_a.csv", i_a), ("hist_diff_b.csv", i_b)):
        curve = metrics.hist_diff(swapped.image, gt, bins=args.bins)
        path = os.path.join(args.out, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "bin_upper_edge", "count_diff"])
            for i, value in enumerate(curve):
                writer.writerow([i, (i + 1) / args.bins, int(value)])
        outputs.append(path)

    report = {
        "mae_ia_vs_gt": metrics.mae(i_a.raw, gt),
        "mae_ib_vs_gt": metrics.mae(i_b.raw, gt),
        "mae_roundtrip_vs_gt": metrics.mae(roundtrip, gt),
        "mae_low_vs_gt": metrics.mae(low, gt),
    }
    report_path = os.path.join(args.out, "mae_report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(report_path)
    write_manifest(args.out, "diagnose-swap", {"bins": args.bins},
                   [args.low, args.gt], outputs)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_roundtrip_loss(args):
    image = Tensor(read_image(args.image)[None])
    series = fourier.roundtrip_series(image, args.repeats,
                                      quantize_bits=args.quantize_bits)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repeat", "mae"])
        for i, value in enumerate(series, start=1):
            writer.writerow([i, f"{value:.12e}"])
    print(f"repeat {args.repeats}: MAE {series[-1]:.6e}")
    return 0


def cmd_evaluate(args):
    pred = dict(_input_images(args.pred))
    gt = dict(_input_images(args.gt))
    common = sorted(set(pred) & set(gt))
    if not common:
        raise DataError("no matching filenames between the two directories")
    for name in sorted(set(pred) ^ set(gt)):
        logger.warning("skipping %s: present on one side only", name)
    rows = []
    for name in common:
        a = read_image(pred[name])
        b = read_image(gt[name])
        if a.shape != b.shape:
            raise DataError(f"{name}: size mismatch {a.shape} vs {b.shape}")
        report = metrics.compare(a, b)
        rows.append({"id": name, **report.as_dict()})
    summary = {
        "images": rows,
        "mean_psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        "mean_mae": float(np.mean([r["mae"] for r in rows])),
    }
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"evaluated {len(rows)} pair(s); mean PSNR "
          f"{summary['mean_psnr_db']:.3f} dB")
    return 0


def cmd_ablate(args):
    cfg = parse_config(args.config)
    pairs = load_dataset(args.data)
    toggles = (args.toggles.split(",") if args.toggles
               else ["baseline"] + sorted(training.ABLATION_TOGGLES))
    summary = {}
    outputs = []
    for toggle in toggles:
        run_cfg = dataclasses.replace(cfg, weights=dataclasses.replace(cfg.weights))
        if toggle != "baseline":
            if toggle not in training.ABLATION_TOGGLES:
                raise UsageError(f"unknown ablation toggle {toggle!r}; valid: "
                                 f"{', '.join(sorted(training.ABLATION_TOGGLES))}")
            setattr(run_cfg, training.ABLATION_TOGGLES[toggle], True)
        run_dir = os.path.join(args.out, toggle.replace("-", "_"))
        logger.info("ablation run %s", toggle)
        result = training.train(run_cfg, pairs, out_dir=run_dir)
        summary[toggle] = {
            "first_total": result.log[0]["total"],
            "final_total": result.log[-1]["total"],
            "log": os.path.join(run_dir, "log.jsonl"),
        }
        outputs.append(os.path.join(run_dir, "checkpoint.bin"))
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "ablate", cfg.as_dict(), [args.config],
                   outputs + [summary_path], seed=cfg.seed)
    print(f"completed {len(toggles)} run(s); summary in {summary_path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="fourlight",
                     description="Two-stage Fourier low-light image enhancement")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train on a paired dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="PNG file or directory")
    p.add_argument("--ir", help="directory of infrared companions")
    p.add_argument("--out", required=True)
    p.add_argument("--save-stage1", action="store_true")
    p.add_argument("--float-dump", action="store_true")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("diagnose-swap",
                       help="amplitude/phase swap experiment on one pair")
    p.add_argument("--low", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_diagnose_swap)

    p = sub.add_parser("roundtrip-loss", help="repeated FFT round-trip error")
    p.add_argument("--image", required=True)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--quantize-bits", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_roundtrip_loss)

    p = sub.add_parser("evaluate", help="metrics between two image directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="one training run per ablation toggle")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--toggles",
                   help="comma-separated toggle names (default: all + baseline)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except (UsageError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
