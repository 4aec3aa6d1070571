"""``spf train | infer | grad-check | bench``.

Exit codes: 0 success, 1 runtime error (reported on stderr as
``spf: error [Kind]: message``), 2 usage error, 3 training diverged.

Environment: ``SPF_THREADS`` caps BLAS threads (0 or unset = library default);
``STRICT_FINITE=1`` checks every forward value for NaN/inf.
"""

import argparse
import os
import statistics
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .attention import measure_score_entries, predicted_score_entries
from .data import load_paired_folder, synthetic_pairs
from .errors import ConfigurationError, StripformerError, TrainingDiverged
from .estimator import deblur
from .gradsuite import BLOCKS, parse_dims, run_block, tolerance
from .imageio import read_png, write_png
from .metrics import psnr
from .model import load_params
from .training import train_loop

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
VANILLA_TOKEN_CAP = 4096
MECHANISMS = ("intra", "inter", "vanilla")

CHECKPOINT_NAME = "checkpoint.spf"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.ini"


def _error(exc):
    print(f"spf: error [{type(exc).__name__}]: {exc}", file=sys.stderr)


# ------------------------------------------------------------------- train
def _dataset(run):
    d = run.data
    if d.synthetic:
        rng = np.random.default_rng(d.data_seed)
        return synthetic_pairs(d.pairs, d.size, rng, (d.length_min, d.length_max), d.noise_sigma)
    return load_paired_folder(d.data_dir)


def cmd_train(args):
    overrides = {
        "train.steps": args.steps,
        "train.seed": args.seed,
        "train.lr_init": args.lr_init,
        "train.batch_size": args.batch_size,
        "loss.lambda2": args.lambda2,
        "data.data_dir": args.data_dir,
    }
    if args.synthetic:
        overrides["data.synthetic"] = True
    if args.data_dir:
        overrides["data.synthetic"] = False
    if args.crop is not None:
        overrides["train.crop"] = "none" if args.crop == 0 else args.crop
    run = cfgmod.resolve(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_config(out / CONFIG_NAME, run)
    dataset = _dataset(run)
    if args.save_pair:
        write_png(out / "pair" / "blurred.png", dataset[0].blurred)
        write_png(out / "pair" / "sharp.png", dataset[0].sharp)
    ckpt = out / CHECKPOINT_NAME
    try:
        result = train_loop(dataset, run.model, run.train, run.loss,
                            checkpoint_path=ckpt, log_path=out / METRICS_NAME)
    except TrainingDiverged as exc:
        _error(exc)
        print(f"last good parameters written to {ckpt}", file=sys.stderr)
        return EXIT_DIVERGED
    first, last = result.log[0], result.log[-1]
    print(f"steps {len(result.log)}  loss {first['total']:.6f} -> {last['total']:.6f}  "
          f"psnr_val {last['psnr_val']:.3f} dB")
    print(f"wrote {ckpt}, {out / METRICS_NAME}, {out / CONFIG_NAME}")
    return EXIT_OK


# ------------------------------------------------------------------- infer
def cmd_infer(args):
    model_config = cfgmod.resolve(args.config).model if args.config else None
    params = load_params(args.checkpoint, model_config)
    img = read_png(args.input)
    dtype = params["out.weight"].dtype
    deblur(params, img, dtype)  # warm-up
    times = []
    for _ in range(args.runs):
        t0 = time.perf_counter()
        restored = deblur(params, img, dtype)
        times.append((time.perf_counter() - t0) * 1e3)
    write_png(args.output, restored)
    h, w = img.shape[-2:]
    print(f"input {h}x{w}  inference_ms {statistics.median(times):.3f} (median of {args.runs})")
    if args.reference:
        ref = read_png(args.reference)
        if ref.shape != img.shape:
            raise ConfigurationError(f"reference is {ref.shape[1:]}, input is {img.shape[1:]}")
        before, after = psnr(img, ref), psnr(restored, ref)
        print(f"psnr_input {before:.3f}  psnr_output {after:.3f}  gain {after - before:.3f} dB")
    return EXIT_OK


# -------------------------------------------------------------- grad-check
def cmd_grad_check(args):
    dims = parse_dims(args.dims) if args.dims else None
    report = run_block(args.block, dims, args.seed, args.heads)
    tol = tolerance(args.block)
    width = max(len(k) for k in report)
    for name, err in report.items():
        flag = "ok" if err < tol else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    worst = max(report.values())
    passed = worst < tol
    print(f"{args.block}: max relative error {worst:.3e} (tolerance {tol:g}) {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_ERROR


# ------------------------------------------------------------------- bench
def _parse_hw(text):
    sizes = []
    for item in text.split(","):
        item = item.strip().lower()
        h, _, w = item.partition("x")
        try:
            sizes.append((int(h), int(w or h)))
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse size {item!r}; use N or HxW") from exc
    if any(min(s) < 1 for s in sizes):
        raise ConfigurationError("sizes must be positive")
    return sizes


def bench_rows(sizes, heads, mechanisms, dim=None):
    """Measure each (size, mechanism); returns (rows, notices). Rows never disagree with the closed form."""
    rows, notices = [], []
    for h, w in sizes:
        for mech in mechanisms:
            if mech == "vanilla" and h * w > VANILLA_TOKEN_CAP:
                notices.append(f"skipped vanilla at {h}x{w}: {h * w} tokens exceeds cap {VANILLA_TOKEN_CAP}")
                continue
            t0 = time.perf_counter()
            stats = measure_score_entries(mech, h, w, heads, dim=dim)
            micros = (time.perf_counter() - t0) * 1e6
            predicted = predicted_score_entries(mech, h, w, heads)
            if stats.score_entries != predicted:
                raise AssertionError(f"{mech} at {h}x{w}, m={heads}: measured {stats.score_entries} "
                                     f"!= closed form {predicted}")
            rows.append(dict(H=h, W=w, mechanism=mech, score_entries=stats.score_entries,
                             predicted=predicted, peak=stats.peak_activation_elements, us=micros))
    return rows, notices


def cmd_bench(args):
    mechanisms = [m.strip() for m in args.mechanisms.split(",") if m.strip()]
    bad = [m for m in mechanisms if m not in MECHANISMS]
    if bad:
        raise ConfigurationError(f"unknown mechanism(s) {bad}; choose from {', '.join(MECHANISMS)}")
    rows, notices = bench_rows(_parse_hw(args.hw), args.m, mechanisms, args.dim)
    header = ("H", "W", "mechanism", "score_entries", "predicted", "peak_activation_elements", "us")
    print("  ".join(f"{h:>12}" for h in header))
    for r in rows:
        print("  ".join(f"{v:>12}" for v in (r["H"], r["W"], r["mechanism"], r["score_entries"],
                                              r["predicted"], r["peak"], f"{r['us']:.1f}")))
    for n in notices:
        print(f"note: {n}")
    print(f"all {len(rows)} measured counts equal their closed forms")
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser():
    p = argparse.ArgumentParser(prog="spf", description="Strip-attention deblurring toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint, metrics and config")
    t.add_argument("--config", help="INI file with [model] [loss] [train] [data] sections")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="train on procedural blur pairs")
    src.add_argument("--data-dir", help="folder with blur/ and sharp/ PNG subfolders")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr-init", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--crop", type=int, help="square crop size; 0 disables cropping")
    t.add_argument("--lambda2", type=float, help="contrastive weight; 0 disables the term")
    t.add_argument("--save-pair", action="store_true", help="also write the first pair as PNGs")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="deblur one PNG")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--reference", help="sharp PNG; reports PSNR before and after")
    i.add_argument("--config", help="verify the checkpoint against this config's [model] section")
    i.add_argument("--runs", type=int, default=5, help="timed runs after one warm-up")
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("grad-check", help="finite-difference gradient check at 64-bit")
    g.add_argument("block", choices=BLOCKS)
    g.add_argument("--dims", help="N,C,H,W of the block input")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--heads", type=int)
    g.set_defaults(func=cmd_grad_check)

    b = sub.add_parser("bench", help="attention-score counts against closed forms")
    b.add_argument("--hw", default="4,8,16,32", help="comma list of N or HxW sizes")
    b.add_argument("--m", type=int, default=1, help="number of heads")
    b.add_argument("--mechanisms", default=",".join(MECHANISMS))
    b.add_argument("--dim", type=int, help="branch width D (default 2*m)")
    b.set_defaults(func=cmd_bench)
    return p


def _thread_limit():
    raw = os.environ.get("SPF_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"SPF_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigurationError(f"SPF_THREADS must be >= 0, got {n}")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (StripformerError, AssertionError, OSError) as exc:
        _error(exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
