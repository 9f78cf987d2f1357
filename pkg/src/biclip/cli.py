"""Command-line entry point: ``biclip <subcommand> ...``.

Failures print a single ``error: <kind>: <message>`` line to stderr and exit
with status 1; usage mistakes exit with status 2.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from biclip import augment
from biclip.errors import BiclipError, CorruptionSpecError

EXIT_FAILURE = 1
EXIT_USAGE = 2


def _corruption(text: str):
    try:
        return augment.parse_corruption(text)
    except CorruptionSpecError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(text: str) -> list[str]:
    from biclip.evaluate import parse_grid

    try:
        return parse_grid(text)
    except CorruptionSpecError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biclip", description="Text-guided segmentation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--side", type=_positive_int, default=64)
    p.add_argument("--dt", type=_positive_int, default=128, help="raw text embedding dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", help="split tag for the new samples (appended if --out exists)")

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="Dice / mIoU of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--corrupt", type=_corruption, default=None, metavar="SPEC")
    p.add_argument("--split", default=None, help="manifest split to score (default: test if present)")

    p = sub.add_parser("sweep", help="evaluate a grid of corruption / data-fraction conditions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=_grid, required=True, metavar="SPEC,SPEC,...")
    p.add_argument("--split", default=None)
    p.add_argument("--config", default=None, help="training config for fraction:P conditions")
    p.add_argument("--out", default=None, help="directory for sweep.csv and sweep.txt")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the full loss")
    p.add_argument("--tol", type=float, default=None, help="32-bit relative tolerance (default 5e-3)")
    p.add_argument("--tol64", type=float, default=None, help="64-bit relative tolerance (default 1e-6)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("report", help="render metrics.csv as a markdown table")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    return parser


def _eval_split(root, split):
    from biclip.data import load_dataset

    data = load_dataset(root)
    if split is None:
        split = "test" if "test" in data.splits() else None
    return data if split is None else data.select_split(split)


def cmd_gen_data(args) -> int:
    from biclip.data import Dataset, generate_synthetic, load_dataset, save_dataset

    new = generate_synthetic(args.n, args.side, args.dt, args.seed, split=args.split)
    out = Path(args.out)
    if (out / "manifest.tsv").exists():
        old = load_dataset(out)
        new = Dataset(old.samples + new.samples)
    save_dataset(new, out)
    print(f"wrote {args.n} samples ({args.split}) to {out}")
    return 0


def cmd_train(args) -> int:
    from biclip.config import TrainConfig
    from biclip.data import load_dataset
    from biclip.train import train

    cfg = TrainConfig.from_file(args.config)
    data = load_dataset(args.data)
    splits = data.splits()
    train_set = data.select_split("train") if "train" in splits else data
    val_name = next((s for s in ("val", "test") if s in splits), None)
    val = data.select_split(val_name) if val_name else None
    result = train(cfg, train_set, val=val, out_dir=args.out)
    last = result.history[-1] if result.history else {}
    print(f"trained {result.steps} steps; checkpoint {result.checkpoint}; final val_dice {last.get('val_dice', float('nan')):.4f}")
    return 0


def cmd_eval(args) -> int:
    from biclip.evaluate import evaluate

    data = _eval_split(args.data, args.split)
    m = evaluate(args.ckpt, data, args.corrupt)
    label = args.corrupt.label if args.corrupt else "clean"
    print(f"condition={label} n={m.n_samples} dice={m.dice:.6f} miou={m.iou:.6f}")
    return 0


def cmd_sweep(args) -> int:
    from biclip.evaluate import robustness_sweep

    data = _eval_split(args.data, args.split)
    train_fn = None
    if args.config:
        from biclip.config import TrainConfig
        from biclip.data import load_dataset
        from biclip.train import train

        cfg = TrainConfig.from_file(args.config)
        full = load_dataset(args.data)
        train_set = full.select_split("train") if "train" in full.splits() else full

        def train_fn(fraction):
            return train(cfg.replace(data_fraction=fraction), train_set).model

    report = robustness_sweep(args.ckpt, data, args.grid, train_fn=train_fn)
    if args.out:
        report.save(args.out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    from biclip.diagnostics import TOL_32, TOL_64, run_gradcheck

    ok, results, elapsed = run_gradcheck(
        tol32=args.tol if args.tol is not None else TOL_32,
        tol64=args.tol64 if args.tol64 is not None else TOL_64,
    )
    for r in results:
        if not args.quiet or not r.passed:
            print(r.line())
    n_bad = sum(not r.passed for r in results)
    print(f"gradcheck: {len(results) - n_bad}/{len(results)} passed in {elapsed:.1f}s")
    if not ok:
        print(f"error: gradcheck: {n_bad} check(s) exceeded tolerance", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def cmd_report(args) -> int:
    from biclip.evaluate import metrics_table

    text = Path(args.inp).read_text(encoding="utf-8")
    Path(args.out).write_text(metrics_table(text), encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except BiclipError as exc:
        print(exc.one_line(), file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
    return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
