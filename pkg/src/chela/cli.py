"""Command-line entry point.

Verbs: ``bench`` (runtime scaling, CSV + figure), ``train`` (synthetic-task
training with metrics CSV, loss figure, and checkpoint), ``eval`` (load a
checkpoint and score a task), ``verify`` (oracle suite; nonzero exit on any
failure). Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from chela.bench import BENCH_OPS, BenchSpec, bench_run, emit_csv, fit_scaling_exponent
from chela.layer import ModelConfig
from chela.rng import Rng


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chela")
    sub = parser.add_subparsers(dest="verb", required=True)

    b = sub.add_parser("bench", help="time ops across sequence lengths")
    b.add_argument("--op", action="append", required=True, choices=BENCH_OPS,
                   help="op to benchmark (repeatable)")
    b.add_argument("--lengths", type=_int_list, required=True,
                   help="comma-separated sequence lengths")
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--chunk", type=int, default=64)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--kernel", type=int, default=64, help="directconv taps")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--softmax-budget", type=int, default=2 ** 28,
                   help="max L*L score entries before softmax is refused")
    b.add_argument("--out", required=True, help="output CSV path")
    b.add_argument("--no-plot", action="store_true",
                   help="skip the scaling figure next to the CSV")

    t = sub.add_parser("train", help="train on a synthetic task")
    t.add_argument("--task", required=True, choices=("copy", "assoc", "adding", "bytelm"))
    t.add_argument("--config", required=True, help="JSON file mirroring ModelConfig")
    t.add_argument("--seed", type=int, default=None, help="override config seed")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--task-len", type=int, default=64)
    t.add_argument("--vocab", type=int, default=8)
    t.add_argument("--n-pairs", type=int, default=8)
    t.add_argument("--data", default=None, help="bytelm corpus path")
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--out", default="run", help="output directory")
    t.add_argument("--no-plot", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", required=True, choices=("copy", "assoc", "adding", "bytelm"))
    e.add_argument("--batches", type=int, default=10)
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--task-len", type=int, default=64)
    e.add_argument("--vocab", type=int, default=8)
    e.add_argument("--n-pairs", type=int, default=8)
    e.add_argument("--data", default=None)
    e.add_argument("--seed", type=int, default=0)

    sub.add_parser("verify", help="run the oracle suite")
    return parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def cli_parse(argv: list[str]) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def cmd_bench(args) -> int:
    spec = BenchSpec(ops=args.op, lengths=args.lengths, d=args.dim, chunk=args.chunk,
                     repeats=args.repeats, kernel=args.kernel, seed=args.seed,
                     softmax_budget=args.softmax_budget)
    rows = bench_run(spec)
    emit_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    for op in args.op:
        sub = [r for r in rows if r.op_name == op]
        if len({r.L for r in sub}) >= 3:
            print(f"{op}: scaling exponent {fit_scaling_exponent(sub):.3f}")
    if not args.no_plot:
        from chela.report import render_scaling_figure
        fig_path = os.path.splitext(args.out)[0] + ".png"
        render_scaling_figure(rows, fig_path)
        print(f"wrote figure {fig_path}")
    return 0


def _load_config(path: str) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_dict(json.load(fh))


def cmd_train(args) -> int:
    from chela.training import AdamWHyper, TrainSpec, train_loop, write_metrics_csv

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    spec = TrainSpec(task=args.task, steps=args.steps, batch_size=args.batch_size,
                     task_len=args.task_len, vocab=args.vocab, n_pairs=args.n_pairs,
                     data_path=args.data, hyper=AdamWHyper(lr=args.lr),
                     checkpoint_path=os.path.join(args.out, "model.ckpt"))
    result = train_loop(cfg, spec)
    csv_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(result.metrics, csv_path)
    if not args.no_plot:
        from chela.report import render_training_figure
        render_training_figure(result.metrics, os.path.join(args.out, "metrics.png"))
    if result.diverged_at is not None:
        print(f"diverged at step {result.diverged_at} (loss is not finite)")
        return 1
    print(f"final loss {result.final_loss:.6f} accuracy {result.final_accuracy:.4f}; "
          f"wrote {csv_path}")
    return 0


def cmd_eval(args) -> int:
    from chela.checkpoint import load_checkpoint
    from chela.training import TrainSpec, _make_batch, batch_loss, byte_lm_batches

    params, _moments, cfg, _rng_state, step = load_checkpoint(args.checkpoint)
    spec = TrainSpec(task=args.task, steps=0, batch_size=args.batch_size,
                     task_len=args.task_len, vocab=args.vocab, n_pairs=args.n_pairs,
                     data_path=args.data)
    rng = Rng(args.seed)
    stream = (byte_lm_batches(args.data, args.task_len, args.batch_size, rng)
              if args.task == "bytelm" else None)
    losses, accs = [], []
    for _ in range(args.batches):
        batch = _make_batch(spec, rng, stream)
        loss, acc = batch_loss(cfg, params, batch)
        losses.append(float(loss.value))
        accs.append(acc)
    print(f"checkpoint step {step}: loss {np.mean(losses):.6f} "
          f"accuracy {np.nanmean(accs):.4f} over {args.batches} batches")
    return 0


def cmd_verify(_args) -> int:
    from chela.verify import run_checks

    failures = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        failures += 0 if ok else 1
    return 1 if failures else 0


def main(argv: list[str] | None = None) -> int:
    args = cli_parse(sys.argv[1:] if argv is None else argv)
    handlers = {"bench": cmd_bench, "train": cmd_train,
                "eval": cmd_eval, "verify": cmd_verify}
    try:
        return handlers[args.verb](args)
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
