"""Command-line interface: ``uvrc {train,compress,decompress,sweep,hist,envelope,eval}``.

Exit codes: 0 success, 2 bad arguments, 3 corrupt stream, 4 model mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bitstream, codec, evaluation
from .errors import CorruptStreamError, ModelMismatchError
from .images import list_images, read_image, write_image
from .model import ARCHITECTURES, METRICS, ModelConfig, load_weights, save_weights
from .training import PatchDataset, TrainingConfig, train_model

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_CORRUPT = 3
EXIT_MISMATCH = 4

log = logging.getLogger("uvrc")


def parse_scales(text: str) -> list[float]:
    """``"0.1:0.9:0.1"`` (inclusive range) or ``"0.2,0.5,0.8"``."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [round(start + i * step, 10) for i in range(n)]
    else:
        vals = [float(p) for p in text.split(",") if p.strip()]
    for v in vals:
        if not 0.0 < v <= 1.0:
            raise argparse.ArgumentTypeError(f"scale {v} outside (0, 1]")
    return vals


def _images(folder) -> list:
    paths = list_images(folder)
    if not paths:
        raise ValueError(f"no PNG/PPM images in {folder}")
    return [read_image(p) for p in paths]


def cmd_train(args) -> int:
    arch = ModelConfig(
        architecture_id=args.arch,
        distortion_metric=args.metric,
        lmbda=args.lmbda,
        latent_channels=args.latent_channels,
        hyper_channels=args.hyper_channels,
        hidden_channels=args.hidden_channels,
        stride_y=args.stride_y,
        stride_z=args.stride_z,
    )
    cfg = TrainingConfig(
        lmbda=args.lmbda, metric=args.metric, steps=args.steps, batch=args.batch,
        patch=args.patch, lr=args.lr, seed=args.seed,
    )
    data = PatchDataset(args.data, cfg.patch)
    log_path = args.log or str(Path(args.out).with_suffix(".loss.csv"))
    w = train_model(cfg, data, arch, log_path=log_path)
    save_weights(w, args.out)
    log.info("wrote %s (fingerprint %016x), loss log %s", args.out, w.fingerprint, log_path)
    return EXIT_OK


def cmd_compress(args) -> int:
    w = load_weights(args.weights)
    f = codec.scale_compress(read_image(args.input), args.scale, w)
    bitstream.write_file(f, args.output)
    log.info("%d bytes, %.4f bpp", len(f), f.bpp())
    return EXIT_OK


def cmd_decompress(args) -> int:
    w = load_weights(args.weights)
    f = bitstream.read_file(args.input)
    x = codec.scale_decompress(f, w)
    write_image(x, args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    w = load_weights(args.weights)
    images = _images(args.images)
    failures: list = []
    pts = evaluation.sweep_scales(images, w, args.scales, failures)
    label = args.label or Path(args.weights).stem
    curve = evaluation.RDCurve(label, pts, dotted=True)
    evaluation.export_csv([curve], args.out)
    if args.plot:
        evaluation.export_plot([curve], args.plot, args.plot_metric)
    for i, s, exc in failures:
        log.warning("image %d at s=%g failed: %s", i, s, exc)
    return EXIT_OK


def cmd_hist(args) -> int:
    w = load_weights(args.weights)
    x = read_image(args.image)
    hists = []
    for s in args.scales:
        h = evaluation.latent_histogram(x, w, s, args.bins)
        hists.append(evaluation.Histogram(h.centers, h.mass, s, f"s={s:g}"))
        var, zero, b = evaluation.dispersion_stats(h)
        log.info("s=%g variance=%.4f zero_mass=%.4f laplacian_b=%.4f", s, var, zero, b)
    evaluation.export_histograms_csv(hists, args.out)
    return EXIT_OK


def cmd_envelope(args) -> int:
    curves = [c for path in args.inputs for c in evaluation.import_csv(path)]
    env = evaluation.pareto_envelope(curves, args.label)
    evaluation.export_csv([env], args.out)
    if args.plot:
        evaluation.export_plot(curves + [env], args.plot, args.plot_metric)
    return EXIT_OK


def cmd_eval(args) -> int:
    """Reference curve (one point per model at s=1) plus the anchor model's sweep."""
    models = [load_weights(p) for p in args.weights]
    images = _images(args.images)
    ref = evaluation.RDCurve(
        "reference", [evaluation.sweep_scales(images, w, [1.0])[0] for w in models]
    )
    # anchor: the model with the highest baseline rate
    by_fp = {w.fingerprint: w for w in models}
    anchor = by_fp[max(ref.points, key=lambda p: p.bpp).fingerprint]
    sweep = evaluation.RDCurve(
        f"single model lambda={anchor.config.lmbda:g}",
        evaluation.sweep_scales(images, anchor, list(args.scales) + [1.0]),
        dotted=True,
    )
    evaluation.export_csv([ref, sweep], args.out)
    if args.plot:
        evaluation.export_plot([ref, sweep], args.plot, args.plot_metric)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uvrc", description="Variable-rate learned image codec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model for one lambda")
    t.add_argument("--arch", choices=ARCHITECTURES, default="hyperprior")
    t.add_argument("--metric", choices=METRICS, default="mse")
    t.add_argument("--lambda", dest="lmbda", type=float, required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="loss log CSV (default: OUT with .loss.csv)")
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--patch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--latent-channels", type=int, default=64)
    t.add_argument("--hyper-channels", type=int, default=32)
    t.add_argument("--hidden-channels", type=int, default=64)
    t.add_argument("--stride-y", type=int, default=8)
    t.add_argument("--stride-z", type=int, default=32)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="encode an image")
    c.add_argument("--weights", required=True)
    c.add_argument("--scale", type=float, default=1.0)
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a .uvrc file")
    d.add_argument("--weights", required=True)
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=cmd_decompress)

    def plot_flags(sp):
        sp.add_argument("--plot", help="also render a PNG plot")
        sp.add_argument("--plot-metric", choices=("psnr", "ms_ssim"), default="psnr")

    s = sub.add_parser("sweep", help="rate-distortion sweep over scale factors")
    s.add_argument("--weights", required=True)
    s.add_argument("--scales", type=parse_scales, default=parse_scales("0.1:0.9:0.1"))
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--label")
    plot_flags(s)
    s.set_defaults(func=cmd_sweep)

    h = sub.add_parser("hist", help="latent symbol histograms at several scales")
    h.add_argument("--weights", required=True)
    h.add_argument("--image", required=True)
    h.add_argument("--scales", type=parse_scales, default=parse_scales("0.2,0.5,0.8"))
    h.add_argument("--bins", type=int, default=65)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hist)

    e = sub.add_parser("envelope", help="Pareto envelope of RD curves from CSV files")
    e.add_argument("--in", dest="inputs", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--label", default="envelope")
    plot_flags(e)
    e.set_defaults(func=cmd_envelope)

    v = sub.add_parser("eval", help="reference curve plus single-model sweep")
    v.add_argument("--weights", nargs="+", required=True)
    v.add_argument("--images", required=True)
    v.add_argument("--scales", type=parse_scales, default=parse_scales("0.1:0.9:0.1"))
    v.add_argument("--out", required=True)
    plot_flags(v)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_BAD_ARGS
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    import torch

    torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except CorruptStreamError as exc:
        log.error("corrupt stream: %s", exc)
        return EXIT_CORRUPT
    except ModelMismatchError as exc:
        log.error("model mismatch: %s", exc)
        return EXIT_MISMATCH
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
