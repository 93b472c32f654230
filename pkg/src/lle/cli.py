"""Command-line interface: ``lle synth | train | infer | eval | bench``.

Exit codes: 0 success, 1 runtime or I/O error, 2 usage error.
``LLE_THREADS`` caps BLAS threads for every subcommand (0 = single-threaded).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError
from .data_synth import NOISE_PRESETS, load_pair, read_manifest, synthesize_dataset
from .images import write_gray_png, write_png
from .parallel import ENV_VAR, thread_limit, threads_from_env
from .rawproc import read_llr1
from .tensor import ShapeError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW (e.g. 128x128), got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _alpha_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI (e.g. 100:300), got {text!r}") from None
    return lo, hi


def _non_negative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive(text: str) -> int:
    v = _non_negative(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    h, w = args.size
    if h % 2 or w % 2:
        raise UsageError(f"--size {h}x{w}: height and width must be even (RGGB mosaic)")
    lo, hi = args.alpha_range
    if not 1 < lo <= hi:
        raise UsageError(f"--alpha-range {lo}:{hi}: need 1 < LO <= HI")
    manifest, records = synthesize_dataset(args.out, args.pairs, h, w, args.seed, (lo, hi), args.noise)
    print(f"wrote {len(records)} pair(s) and {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import ConfigError, TrainConfig, TrainingDiverged, apply_ablation, train_loop

    manifest = Path(args.manifest)
    if not manifest.is_file():
        print(f"error: manifest {manifest} does not exist", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        if args.ablation:
            config = apply_ablation(config, args.ablation)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    def progress(step, m):
        if args.log_every and step % args.log_every == 0:
            print(f"step {step}: loss_d={m['loss_d']:.4f} loss_g_adv={m['loss_g_adv']:.4f} loss_rec={m['loss_rec']:.4f}", file=sys.stderr)

    try:
        result = train_loop(manifest, config, args.out, resume=args.resume, progress=progress)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for msg in result.skipped:
        print(f"warning: skipped {msg}", file=sys.stderr)
    print(f"trained {result.steps} step(s); checkpoint {result.checkpoint}; metrics {result.metrics}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .inference import enhance_frame
    from .trainer import load_generator

    raw = read_llr1(args.raw)
    alpha = args.alpha if args.alpha is not None else raw.alpha
    if alpha is None:
        raise UsageError(f"{args.raw} carries no ground-truth exposure; pass --alpha")
    if not alpha > 0:
        raise UsageError(f"--alpha must be > 0, got {alpha}")
    G = load_generator(args.ckpt)
    try:
        image, maps = enhance_frame(G, raw.frame, alpha)
    except ShapeError as exc:
        raise UsageError(str(exc)) from None
    write_png(args.out, image, bits=8)
    if args.dump_attention:
        out_dir = Path(args.dump_attention)
        out_dir.mkdir(parents=True, exist_ok=True)
        if not G.has_gates:
            print("note: model has no attention gates; maps are all ones", file=sys.stderr)
        for level, m in enumerate(maps):
            write_gray_png(out_dir / f"attn_L{level}.png", m[0, 0])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .inference import enhance_frame
    from .metrics import evaluate_pairs
    from .trainer import load_generator

    records = read_manifest(args.manifest, check_files=False)
    G = load_generator(args.ckpt)

    def loader(rec):
        def load():
            pair = load_pair(rec)
            pred, _ = enhance_frame(G, pair.frame, pair.alpha)
            return pred, pair.gt

        return load

    report = evaluate_pairs((Path(r.raw_path).stem, loader(r)) for r in records)
    Path(args.report).write_text(report.to_csv(), encoding="utf-8")
    for row in report.failures:
        print(f"error: {row.image}: {row.error}", file=sys.stderr)
    print(report.summary())
    return EXIT_RUNTIME if report.failures else EXIT_OK


def cmd_bench(args) -> int:
    from .bench import emit_report, time_inference
    from .trainer import load_generator

    G = load_generator(args.ckpt)
    threads = args.threads if args.threads is not None else threads_from_env()
    try:
        report = time_inference(G, args.resolution, args.warmup, args.iters, threads=threads)
    except ShapeError as exc:
        raise UsageError(str(exc)) from None
    text = emit_report(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lle",
        description="Raw low-light enhancement with an attention U-Net GAN.",
        epilog=f"Environment: {ENV_VAR}=N caps op-internal threads (0 = single-threaded).",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="write synthetic raw/ground-truth pairs and a manifest")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--pairs", type=_non_negative, default=8, help="number of pairs (default 8)")
    s.add_argument("--size", type=_size, default=(128, 128), help="frame size HxW, both even (default 128x128)")
    s.add_argument("--alpha-range", type=_alpha_range, default=(100.0, 300.0), help="exposure ratio range LO:HI (default 100:300)")
    s.add_argument("--noise", choices=sorted(NOISE_PRESETS), default="default", help="noise preset (default: default)")
    s.add_argument("--seed", type=_non_negative, default=0, help="dataset seed (default 0)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--manifest", required=True, help="data manifest (raw<TAB>gt<TAB>alpha)")
    t.add_argument("--config", help="key = value config file (defaults used when omitted)")
    t.add_argument("--out", required=True, help="directory for checkpoints and metrics.csv")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--ablation", choices=["baseline", "attn", "msssim", "full"], help="override the ablation switches")
    t.add_argument("--log-every", type=_non_negative, default=0, help="print losses every N steps to stderr (0 = quiet)")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="enhance one LLR1 raw frame")
    i.add_argument("--ckpt", required=True, help="checkpoint file")
    i.add_argument("--raw", required=True, help="LLR1 raw input")
    i.add_argument("--alpha", type=float, help="exposure ratio (default: from the file's metadata)")
    i.add_argument("--out", required=True, help="output PNG (8-bit)")
    i.add_argument("--dump-attention", metavar="DIR", help="write attn_L{level}.png gate maps here")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest")
    e.add_argument("--manifest", required=True, help="data manifest")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--report", required=True, help="CSV report path")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time single-pass inference")
    b.add_argument("--ckpt", required=True, help="checkpoint file")
    b.add_argument("--resolution", type=_size, default=(256, 256), help="output resolution HxW (default 256x256)")
    b.add_argument("--warmup", type=_non_negative, default=2, help="untimed warmup iterations (default 2)")
    b.add_argument("--iters", type=_positive, default=10, help="timed iterations (default 10)")
    b.add_argument("--format", choices=["text", "csv", "jsonl"], default="text", help="report format")
    b.add_argument("--threads", type=_non_negative, help=f"BLAS threads (default from {ENV_VAR}, 0 = 1)")
    b.add_argument("--out", help="write the report here instead of stdout")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = threads_from_env()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with thread_limit(threads):
            return args.func(args)
    except UsageError as exc:
        print(f"lle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, CheckpointError, RuntimeError) as exc:
        print(f"lle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
