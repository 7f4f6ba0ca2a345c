"""Command-line entry point: ``python -m freqscan.cli <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (divergence, non-finite values,
failed gradient check), 2 usage error. Every run writes ``manifest.json``
into ``--out-dir``.

Training flags resolve as: command-line flag, then the ``--config`` JSON
file, then the preset default. torch is imported only by the subcommands
that need it so ``lengths`` stays fast.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import fields
from importlib import metadata
from pathlib import Path

import numpy as np

from freqscan import __version__
from freqscan.netpbm import read_pnm, write_pgm, write_ppm
from freqscan.serialization import (
    ORDERS,
    SerializationConfig,
    band_grids,
    band_images,
    band_order,
    band_offsets,
    sequence_length,
)
from freqscan.spectral import MAX_BANDS, band_thresholds, decompose, low_pass_keep, spectral_energy

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _version(pkg: str) -> str | None:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return None


def write_manifest(out_dir: Path, args, config: dict) -> Path:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "seed": args.seed,
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "versions": {"freqscan": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "torch": _version("torch")},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def parse_k_range(text: str) -> list[int]:
    try:
        lo, _, hi = text.partition(":")
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise UsageError(f"--K-range must look like 2:6, got {text!r}") from None
    if not 1 <= lo <= hi <= MAX_BANDS:
        raise UsageError(f"--K-range must satisfy 1 <= lo <= hi <= {MAX_BANDS}, got {text!r}")
    return list(range(lo, hi + 1))


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def read_image(path) -> np.ndarray:
    try:
        return read_pnm(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read image {path}: {e}") from None


def write_image(path: Path, image: np.ndarray) -> Path:
    """PGM for single-channel, PPM for RGB; returns the path actually written."""
    if image.ndim == 3 and image.shape[-1] == 1:
        image = image[:, :, 0]
    if image.ndim == 2:
        path = path.with_suffix(".pgm")
        write_pgm(path, image)
    else:
        path = path.with_suffix(".ppm")
        write_ppm(path, image)
    return path


def set_threads():
    raw = os.environ.get("GMBA_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GMBA_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("GMBA_THREADS must be >= 0")
    if n > 0:
        import torch

        torch.set_num_threads(n)


# ---------------------------------------------------------------- lengths


def cmd_lengths(args) -> int:
    ks = parse_k_range(args.K_range)
    if args.base_grid < 1:
        raise UsageError("--base-grid must be >= 1")
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["K", "band_grids", "length"])
    for K in ks:
        grids = band_grids(K, args.base_grid)
        out.writerow([K, ";".join(map(str, grids)), sequence_length(K, args.base_grid, args.cls)])
    write_manifest(args.out_dir, args, {"K_range": args.K_range, "base_grid": args.base_grid, "cls": args.cls})
    return EXIT_OK


# ---------------------------------------------------------------- decompose


def cmd_decompose(args) -> int:
    if not 1 <= args.K <= MAX_BANDS:
        raise UsageError(f"--K must be in [1, {MAX_BANDS}]")
    image = read_image(args.input)
    bands = decompose(image, args.K)
    h, w = image.shape[:2]
    planes = image[None] if image.ndim == 2 else np.moveaxis(image, -1, 0)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    stats = {"input": str(args.input), "K": args.K, "height": h, "width": w,
             "channels": len(planes), "total_energy": float(sum(spectral_energy(p) for p in planes)),
             # Band pixels are written on the input's [0, 1] scale and clamped.
             "renormalization": {"scale": 1.0, "offset": 0.0, "clamp": [0.0, 1.0]},
             "bands": []}
    for k, (f_k, band) in enumerate(zip(band_thresholds(args.K).thresholds, bands), start=1):
        band_planes = band[None] if band.ndim == 2 else np.moveaxis(band, -1, 0)
        path = write_image(args.out_dir / f"band_{k}", band)
        stats["bands"].append({
            "k": k,
            "threshold": f_k,
            "retained_coefficients": int(low_pass_keep(h, w, f_k).sum()),
            "energy": float(sum(spectral_energy(p) for p in band_planes)),
            "clipped_pixels": int(((band < -0.5 / 255) | (band > 1 + 0.5 / 255)).sum()),
            "file": path.name,
        })
    (args.out_dir / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps(stats))
    write_manifest(args.out_dir, args, {"input": str(args.input), "K": args.K})
    return EXIT_OK


# ---------------------------------------------------------------- serialize


def cmd_serialize(args) -> int:
    image = read_image(args.input) if args.input else None
    size = args.image_size or (image.shape[0] if image is not None else 64)
    if image is not None and image.shape[:2] != (size, size):
        raise UsageError(f"input is {image.shape[1]}x{image.shape[0]}, expected {size}x{size}")
    chans = 1 if image is None or image.ndim == 2 else image.shape[2]
    try:
        cfg = SerializationConfig(K=args.K, patch_size=args.patch_size, image_size=size, in_chans=chans,
                                  use_class_token=args.cls, order=args.order, order_seed=args.order_seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    offsets = band_offsets(cfg)
    info = {"K": cfg.K, "base_grid": cfg.base_grid, "band_grids": cfg.band_grids,
            "band_order": [k + 1 for k in band_order(cfg)], "band_offsets": offsets,
            "total_length": cfg.seq_len,
            "class_token_index": cfg.seq_len - 1 if cfg.use_class_token else None}
    if args.dump_pgm:
        if image is None:
            raise UsageError("--dump-pgm needs --input")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for k, b in enumerate(band_images(image, cfg), start=1):
            files.append(write_image(args.out_dir / f"band_{k}_{b.shape[-1]}px", np.moveaxis(b, 0, -1)).name)
        info["band_files"] = files
    print(json.dumps(info))
    write_manifest(args.out_dir, args, {**cfg.to_dict(), "input": args.input})
    return EXIT_OK


# ---------------------------------------------------------------- training commands

TRAIN_FLAGS = {
    # flag dest: TrainConfig field
    "preset": "preset", "epochs": "epochs", "batch_size": "batch_size", "lr": "base_lr",
    "weight_decay": "weight_decay", "warmup_fraction": "warmup_fraction",
    "label_smoothing": "label_smoothing", "dataset": "dataset", "data_dir": "data_dir",
    "n_train": "n_train", "n_test": "n_test", "num_classes": "num_classes",
    "image_size": "image_size", "K": "K", "order": "order", "order_seed": "order_seed", "flip": "flip",
}


def add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=["micro_plain", "tiny_plain"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--warmup-fraction", type=float)
    p.add_argument("--label-smoothing", type=float)
    p.add_argument("--dataset", choices=["synthetic_bands", "image_folder"])
    p.add_argument("--data-dir")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--K", type=int, help="number of bands (overrides the preset)")
    p.add_argument("--order", choices=ORDERS)
    p.add_argument("--order-seed", type=int)
    p.add_argument("--flip", action=argparse.BooleanOptionalAction, default=None)


def resolve_train_config(args, base: dict | None = None):
    from freqscan.train import TrainConfig

    valid = {f.name for f in fields(TrainConfig)}
    merged = dict(base or {})
    file_cfg = load_config_file(args.config)
    unknown = set(file_cfg) - valid
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged.update(file_cfg)
    for dest, name in TRAIN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            merged[name] = value
    if args.seed is not None:
        merged["seed"] = args.seed
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from None


def cmd_train(args) -> int:
    from freqscan.checkpoint import save_checkpoint
    from freqscan.model import build

    set_threads()
    config = resolve_train_config(args)
    out = args.out_dir
    write_manifest(out, args, config.to_dict())
    if args.init_only:
        out.mkdir(parents=True, exist_ok=True)
        model = build(config.model_config(), seed=config.seed)
        save_checkpoint(out / "model.gmba", model, {"train_config": config.to_dict(), "trained": False})
        print(json.dumps({"checkpoint": str(out / "model.gmba"), "trained": False}))
        return EXIT_OK
    from freqscan.train import train

    log = None if args.quiet else (lambda row: print(json.dumps(row), file=sys.stderr, flush=True))
    result = train(config, out, log=log)
    print(json.dumps({"test_accuracy": result.test_accuracy, "metrics": str(result.metrics_path),
                      "checkpoint": str(result.checkpoint)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from freqscan.checkpoint import CheckpointError, load_checkpoint
    from freqscan.train import dataset_for_eval, evaluate

    set_threads()
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError, KeyError, ValueError) as e:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {e}") from None
    config = resolve_train_config(args, meta.get("train_config"))
    mc = model.config
    if config.num_classes != mc.num_classes or config.image_size != mc.serialization.image_size:
        raise UsageError("dataset flags do not match the checkpoint's model config")
    from freqscan.data import load_image_folder, synthetic_bands

    if config.dataset == "synthetic_bands":
        ds = synthetic_bands(config.n_test, config.num_classes, config.image_size, config.seed, "test")
    else:
        ds = load_image_folder(config.data_dir, config.image_size)
    bands, labels = dataset_for_eval(ds, mc)
    loss, acc = evaluate(model, bands, labels)
    report = {"checkpoint": str(args.checkpoint), "n": int(len(labels)),
              "num_classes": mc.num_classes, "loss": loss, "accuracy": acc}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    write_manifest(args.out_dir, args, config.to_dict())
    return EXIT_OK


def cmd_ablate(args) -> int:
    from freqscan.ablation import ablation_csv, run_ablation

    set_threads()
    config = resolve_train_config(args)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    write_manifest(args.out_dir, args, {**config.to_dict(), "axis": args.axis, "seeds": list(seeds)})
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    rows = run_ablation(config, args.axis, seeds, log=log)
    text = ablation_csv(rows, args.axis)
    (args.out_dir / f"ablation_{args.axis}.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import torch

    from freqscan.model import batch_bands, build
    from freqscan.train import grad_check, loss_fn, prepare

    set_threads()
    config = resolve_train_config(args, {"n_train": args.batch, "n_test": args.batch})
    if args.batch < 1 or args.batch % config.num_classes:
        raise UsageError(f"--batch must be a positive multiple of num_classes ({config.num_classes})")
    mc = config.model_config()
    (train_ds, bands), _ = prepare(config, mc)
    model = build(mc, seed=config.seed)
    x = batch_bands(bands)
    y = torch.from_numpy(train_ds.labels)

    def loss_of(m):
        dtype = next(m.parameters()).dtype
        return loss_fn(m([b.to(dtype) for b in x]), y)

    report = grad_check(model, loss_of, eps=args.eps, tolerance=args.tolerance,
                        n_params=args.n_params, seed=config.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "gradcheck.csv").write_text(report.to_csv())
    summary = {"n_params": len(report.rows), "eps": args.eps, "tolerance": args.tolerance,
               "max_rel_error": report.max_error, "median_rel_error": report.median_error,
               "sequence_length": mc.serialization.seq_len, "passed": report.passed}
    print(json.dumps(summary))
    write_manifest(args.out_dir, args, {**config.to_dict(), "eps": args.eps, "n_params": args.n_params})
    return EXIT_OK if report.passed else EXIT_FAILURE


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=None, help="output directory (default runs/<command>)")
    common.add_argument("--config", default=None, help="JSON file of training settings")

    # Global flags live on each subcommand so they are never shadowed by subparser defaults.
    parser = argparse.ArgumentParser(prog="freqscan",
                                     description="Frequency-band serialization for causal scan models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lengths", parents=[common], help="sequence lengths per K")
    p.add_argument("--K-range", default="1:6", help="inclusive range lo:hi (default 1:6)")
    p.add_argument("--base-grid", type=int, default=14)
    p.add_argument("--cls", action="store_true", help="count a class token")
    p.set_defaults(func=cmd_lengths)

    p = sub.add_parser("decompose", parents=[common], help="split an image into K frequency bands")
    p.add_argument("--input", required=True)
    p.add_argument("--K", type=int, required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("serialize", parents=[common], help="describe the token layout")
    p.add_argument("--input")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--image-size", type=int)
    p.add_argument("--cls", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--order", choices=ORDERS, default="low_to_high")
    p.add_argument("--order-seed", type=int, default=0)
    p.add_argument("--dump-pgm", action="store_true", help="write the resampled band images")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    add_train_flags(p)
    p.add_argument("--init-only", action="store_true", help="write an untrained checkpoint and stop")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="order or K ablation")
    p.add_argument("--axis", choices=["order", "K"], required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--quiet", action="store_true")
    add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    add_train_flags(p)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--n-params", type=int, default=50)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-2)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    args.argv = argv
    if args.out_dir is None:
        args.out_dir = Path("runs") / args.command
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"freqscan {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, RuntimeError) as e:
        print(f"freqscan {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
