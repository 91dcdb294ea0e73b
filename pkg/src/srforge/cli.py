"""Command-line entry point: ``srforge <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 I/O or data error,
3 numerical failure (non-finite loss or divergence).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import models, pipeline
from .checkpoint import CheckpointError, load_model, model_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .metrics import evaluate_sr, predict_plane
from .pipeline import DataError
from .tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("srforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_data(sub):
    root = os.environ.get("SRFORGE_DATA_DIR")
    return str(Path(root) / sub) if root else None


# ---------------------------------------------------------------- prepare-data


def cmd_prepare_data(args):
    src = args.src or _default_data("train")
    if not src or not Path(src).is_dir():
        raise DataError(f"source directory not found: {src}")
    for s in args.scales:
        if s not in (2, 3, 4):
            raise UsageError(f"scale {s} not in 2, 3, 4")
    pairs = pipeline.make_sr_dataset(src, args.scales, args.patch, args.stride, args.augment, args.seed)
    n = pipeline.write_manifest(args.out, (p.record for p in pairs), args.patch, args.stride)
    print(f"{n} patches written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- train-sr


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    for key in ("manifest", "val_dir", "out_dir", "epochs", "seed", "max_patches", "max_iters", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            pairs.append((key, str(v)))
    return apply_overrides(cfg, pairs)


def load_patches(manifest, max_patches=0):
    records, patch = pipeline.read_manifest(manifest)
    if max_patches:
        records = records[:max_patches]
    if not records:
        raise DataError(f"manifest {manifest} has no records")
    return pipeline.stack_pairs(pipeline.pair_from_record(r, patch) for r in records)


def cmd_train_sr(args):
    from .train import Diverged, TrainLog, train_sr

    cfg = _run_config(args)
    if not cfg.manifest:
        raise ConfigError("no manifest given (config key 'manifest' or --manifest)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    with _threads(cfg.threads):
        lr, hr = load_patches(cfg.manifest, cfg.max_patches)
        log_path = out / "train_log.csv"
        mode = "a" if args.resume else "w"
        with open(log_path, mode, encoding="utf-8", newline="\n") as f:
            if not args.resume:
                f.write(TrainLog().header())
            flushed = [0]

            def on_epoch(epoch, net, tlog):
                for row in tlog.rows[flushed[0] :]:
                    f.write(TrainLog.format_row(row))
                flushed[0] = len(tlog.rows)
                f.flush()

            try:
                train_sr(cfg, lr, hr, resume=args.resume, on_epoch=on_epoch)
            except Diverged as e:
                print(f"training diverged: {e}; last good checkpoint in {out}", file=sys.stderr)
                return EXIT_NUMERIC
    print(f"trained on {len(lr)} patches; checkpoints and log in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval-sr


def cmd_eval_sr(args):
    data = args.data or _default_data("Set5")
    if not data or not Path(data).is_dir():
        raise DataError(f"dataset directory not found: {data}")
    net, _ = load_model(args.checkpoint)
    with _threads(args.threads):
        report = evaluate_sr(net, data, args.scale, args.shave, args.quantize)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- upscale


def _upscale_image(net, img, scale):
    h, w = img.shape[:2]
    if img.ndim == 2:
        plane = img.astype(np.float64) / 255.0
        up = pipeline.bicubic_resize(plane, w * scale, h * scale)
        return up, predict_plane(net, up.astype(np.float32))
    rgb = img.astype(np.float64) / 255.0
    y, cb, cr = pipeline.rgb_to_ycbcr(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    up = [pipeline.bicubic_resize(c / 255.0, w * scale, h * scale) for c in (y, cb, cr)]
    y_sr = predict_plane(net, up[0].astype(np.float32)).astype(np.float64)

    def to_rgb(yy):
        r, g, b = pipeline.ycbcr_to_rgb(yy * 255.0, up[1] * 255.0, up[2] * 255.0)
        return np.clip(np.stack([r, g, b], axis=-1), 0, 1)

    return to_rgb(up[0]), to_rgb(y_sr)


def cmd_upscale(args):
    net, _ = load_model(args.checkpoint)
    img = pipeline.read_image(args.image)
    with _threads(args.threads):
        bicubic, sr = _upscale_image(net, img, args.scale)
    pipeline.write_png(args.out, np.clip(sr, 0, 1))
    if args.compare:
        hr = pipeline.read_image(args.compare).astype(np.float64) / 255.0
        if hr.ndim != np.ndim(sr):
            hr = hr if hr.ndim == 3 else np.stack([hr] * 3, -1)
            sr = sr if sr.ndim == 3 else np.stack([sr] * 3, -1)
            bicubic = bicubic if bicubic.ndim == 3 else np.stack([bicubic] * 3, -1)
        hh, ww = sr.shape[:2]
        hr = hr[:hh, :ww]
        if hr.shape[:2] != (hh, ww):
            raise DataError(f"--compare image is {hr.shape[:2]}, expected at least {(hh, ww)}")
        gap = np.ones((hh, 4) + sr.shape[2:])
        grid = np.concatenate([np.clip(bicubic, 0, 1), gap, np.clip(sr, 0, 1), gap, hr], axis=1)
        grid_path = args.grid or str(Path(args.out).with_name(Path(args.out).stem + "_compare.png"))
        pipeline.write_png(grid_path, grid)
        print(f"comparison grid (bicubic | model | ground truth) written to {grid_path}")
    print(f"wrote {args.out} ({sr.shape[1]}x{sr.shape[0]})")
    return EXIT_OK


# ---------------------------------------------------------------- count-params


def count_table(widths, cardinality=32, blocks=6, base=64):
    rows = []
    for w in widths:
        for grouped in (False, True):
            for bias in (False, True):
                block = models.build_block(base, w, cardinality, 3, bias, grouped)
                per = models.count_parameters(block, include_bias=bias)
                rows.append((w, "branches" if grouped else "plain", bias, per, per * blocks))
    return rows


def cmd_count_params(args):
    try:
        for w in args.widths:
            models.ModelConfig(3 * args.blocks, w, args.cardinality, args.base)
    except ValueError as e:
        raise UsageError(str(e)) from None
    print(f"{'width':>6} {'design':>9} {'bias':>5} {'per block':>10} {'x' + str(args.blocks) + ' blocks':>12}")
    for w, design, bias, per, total in count_table(args.widths, args.cardinality, args.blocks, args.base):
        print(f"{w:>6} {design:>9} {('yes' if bias else 'no'):>5} {per:>10,} {total:>12,}")
    return EXIT_OK


# ---------------------------------------------------------------- MNIST / SRCGAN


def _mnist(args):
    from .sample_data import full_mnist, mnist_subset

    where = args.mnist_dir or _default_data("mnist")
    if where == "bundled":
        return mnist_subset()
    if not where:
        raise DataError("no MNIST directory: pass --mnist-dir or set SRFORGE_DATA_DIR")
    sets = full_mnist(where)
    if sets is None:
        raise DataError(f"MNIST IDX files not found under {where}")
    return sets


def _limit(ds, n):
    return ds.subset(slice(0, n)) if n else ds


def cmd_train_classifier(args):
    from .srcgan import accuracy, train_classifier

    train, test = _mnist(args)
    train = _limit(train, args.train_limit)
    with _threads(args.threads):
        net = train_classifier(train, args.epochs, args.batch_size, args.lr, args.seed)
        acc = accuracy(net, test.images, test.labels)
    save_checkpoint(args.out, model_checkpoint(net, "classifier", {"epochs": args.epochs, "seed": args.seed}))
    print(f"classifier test accuracy: {acc:.4f} ({len(test)} images)")
    return EXIT_OK


def cmd_train_srcgan(args):
    from .srcgan import GanConfig, TrainingDiverged, sample_grid, train_srcgan
    from .pipeline import downscale_mnist

    train, test = _mnist(args)
    train = _limit(train, args.train_limit)
    cfg = GanConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        conditioned=not args.no_condition,
        saturating=args.saturating,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _threads(args.threads):
        try:
            pair, trace = train_srcgan(train, cfg)
        except TrainingDiverged as e:
            if e.trace is not None:
                (out / "losses.csv").write_text(e.trace.to_csv(), encoding="utf-8")
            print(f"training diverged: {e}", file=sys.stderr)
            return EXIT_NUMERIC
    fields = {"conditioned": int(cfg.conditioned), "g_width": cfg.g_width, "d_width": cfg.d_width,
              "leaky_alpha": cfg.leaky_alpha, "epochs": cfg.epochs, "seed": cfg.seed}
    save_checkpoint(out / "generator.srfg", model_checkpoint(pair.generator, "srcgan_generator", fields))
    save_checkpoint(out / "discriminator.srfg", model_checkpoint(pair.discriminator, "srcgan_discriminator", fields))
    (out / "losses.csv").write_text(trace.to_csv(), encoding="utf-8")
    k = min(10, len(test))
    lr = downscale_mnist(test.subset(slice(0, k)), 4)
    gen = pair.generate(lr, test.labels[:k] if cfg.conditioned else None)
    pipeline.write_png(out / "samples.png", sample_grid([lr, gen, test.images[:k]]))
    print(f"{'SRCGAN' if cfg.conditioned else 'SR Vanilla GAN'}: {len(trace)} iterations; outputs in {out}")
    return EXIT_OK


def _load_generator(path):
    from .srcgan import GanPair

    net, ckpt = load_model(path)
    if ckpt.kind != "srcgan_generator":
        raise CheckpointError(f"{path} holds a {ckpt.kind!r}, not a generator")
    return GanPair(net, None, bool(ckpt.config["conditioned"]))


def cmd_eval_srcgan(args):
    from .srcgan import accuracy, classify_generated, sample_grid
    from .pipeline import downscale_mnist

    _, test = _mnist(args)
    clf, ckpt = load_model(args.classifier)
    if ckpt.kind != "classifier":
        raise CheckpointError(f"{args.classifier} is not a classifier checkpoint")
    lr = downscale_mnist(test, 4)
    rows = [("Ground truth HR", accuracy(clf, test.images, test.labels))]
    gens = []
    for label, path in (("SRCGAN", args.srcgan), ("SR Vanilla GAN", args.vanilla)):
        if path:
            pair = _load_generator(path)
            rows.append((label, classify_generated(clf, pair, test, lr)))
            gens.append(pair.generate(lr[:10], test.labels[:10] if pair.conditioned else None))
    print(f"{'Models':<16} Accuracy")
    for name, acc in rows:
        print(f"{name:<16} {100 * acc:.2f}%")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "accuracy"])
            for name, acc in rows:
                w.writerow([name, f"{acc:.6f}"])
    if args.grid:
        pipeline.write_png(args.grid, sample_grid([lr[:10], *gens, test.images[:10]]))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="srforge", description="Super-resolution toolkit: VDSR-ResNeXt and SRCGAN.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare-data", help="build a patch manifest from a directory of images")
    s.add_argument("--src")
    s.add_argument("--scales", type=_int_list, default=[2, 3, 4])
    s.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--patch", type=int, default=41)
    s.add_argument("--stride", type=int, default=41)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="manifest.txt")
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("train-sr", help="train VDSR / VDSR-ResNeXt")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--manifest")
    s.add_argument("--val-dir", dest="val_dir")
    s.add_argument("--out-dir", dest="out_dir")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-patches", dest="max_patches", type=int)
    s.add_argument("--max-iters", dest="max_iters", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train_sr)

    s = sub.add_parser("eval-sr", help="PSNR/SSIM of a checkpoint on a benchmark directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.add_argument("--scale", type=int, default=2)
    s.add_argument("--shave", type=int)
    s.add_argument("--quantize", action="store_true")
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_eval_sr)

    s = sub.add_parser("upscale", help="super-resolve one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--scale", type=int, default=2)
    s.add_argument("--out", required=True)
    s.add_argument("--compare", help="ground-truth HR image for a side-by-side grid")
    s.add_argument("--grid")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_upscale)

    s = sub.add_parser("count-params", help="parameter counts per block, with and without branches")
    s.add_argument("--widths", type=_int_list, default=[64, 128, 256])
    s.add_argument("--cardinality", type=int, default=32)
    s.add_argument("--blocks", type=int, default=6)
    s.add_argument("--base", type=int, default=64)
    s.set_defaults(func=cmd_count_params)

    def mnist_args(s):
        s.add_argument("--mnist-dir", help="directory with MNIST IDX files, or 'bundled' for the 5k subset")
        s.add_argument("--threads", type=int, default=1)

    s = sub.add_parser("train-classifier", help="train the MNIST digit classifier")
    mnist_args(s)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--batch-size", type=int, default=128)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-limit", type=int, default=0)
    s.add_argument("--out", default="classifier.srfg")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("train-srcgan", help="train SRCGAN (or the unconditional baseline)")
    mnist_args(s)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=128)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--beta1", type=float, default=0.5)
    s.add_argument("--beta2", type=float, default=0.999)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-condition", action="store_true", help="train the unconditional baseline")
    s.add_argument("--saturating", action="store_true", help="use log(1 - D(G)) as the generator loss")
    s.add_argument("--train-limit", type=int, default=0)
    s.add_argument("--out-dir", default="runs/srcgan")
    s.set_defaults(func=cmd_train_srcgan)

    s = sub.add_parser("eval-srcgan", help="classifier accuracy on generated digits")
    mnist_args(s)
    s.add_argument("--classifier", required=True)
    s.add_argument("--srcgan")
    s.add_argument("--vanilla")
    s.add_argument("--out")
    s.add_argument("--grid")
    s.set_defaults(func=cmd_eval_srcgan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0, argument errors exit EXIT_USAGE
        return EXIT_OK if e.code in (0, None) else int(e.code)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"srforge: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as e:
        print(f"srforge: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as e:
        print(f"srforge: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
