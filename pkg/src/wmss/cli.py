"""Command-line entry point: ``wmss <command> [flags]``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or corrupt input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import theory
from .diagnostics import extended_stats, gap_stats
from .experiments import sweep_lambda
from .logit_math import InvalidInputError
from .storage import CorruptFileError, load_checkpoint, load_corpus, save_checkpoint
from .trainer import METHODS, REPORT_COLUMNS, TrainConfig, run, write_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("wmss")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return TrainConfig.load(p)
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


def cmd_verify_theory(args) -> int:
    reports = theory.run_all(args.trials, args.seed, args.dim)
    if args.out:
        theory.write_reports(reports, args.out)
    bad = 0
    for r in reports:
        status = "ok" if r.ok else "FAIL"
        bad += not r.ok
        print(f"{status:4s} {r.name:32s} trials={r.trials} premise={r.premise_satisfied_trials} "
              f"violations={r.violations} max_residual={r.max_residual:.3e}")
    return EXIT_OK if bad == 0 else EXIT_FAIL


def cmd_train(args) -> int:
    cfg = replace(_load_config(args.config), method=args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, report = run(cfg)
    write_report(report, out / "report.csv")
    for i, ckpt in enumerate(report.checkpoints):
        save_checkpoint(out / f"checkpoint_{i:02d}.bin", ckpt, cfg.seed)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    last = report.epochs[-1]
    print(f"{cfg.method}: eval_acc={last.eval_acc:.4f} eval_loss={last.eval_loss:.4f} gap={last.gap.gap:.4f} "
          f"checkpoints={len(report.checkpoints)}")
    return EXIT_OK


SWEEP_COLUMNS = ("lambda", "seed", "eval_acc", "gap", "alpha_estimate", "lambda_cross")


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}") from exc
    if not grid or any(not 0.0 <= v <= 1.0 for v in grid):
        raise UsageError("grid values must lie in [0, 1]")
    return grid


def cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    rows = sweep_lambda(_load_config(args.config), grid, args.seeds)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r.lam, r.seed, *(repr(float(v)) for v in (r.eval_acc, r.gap, r.alpha_estimate, r.lambda_cross))])
    return EXIT_OK


ANALYZE_COLUMNS = ("z_target", "z_bg", "gap", "sigma", "n_positions", "mean", "std", "centered_norm",
                   "max", "min", "l2", "entropy", "max_prob")


def cmd_analyze(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    params, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    vocab = params.dims.vocab
    if any(not 0 <= t < vocab for s in corpus for t in s.tokens):
        raise CorruptFileError(f"{args.corpus}: tokens outside vocabulary of size {vocab}")
    g = gap_stats(params, corpus, args.n, args.seed)
    s = extended_stats(params, corpus, args.n, args.seed)
    row = [g.z_target, g.z_bg, g.gap, g.sigma, g.n_positions, s.mean, s.std, s.centered_norm,
           s.max, s.min, s.l2_norm, s.entropy, s.max_prob]
    text = ",".join(ANALYZE_COLUMNS) + "\n" + ",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


SUMMARY_COLUMNS = ("source", "method", "epochs", "eval_acc", "eval_loss", "z_target", "z_bg", "gap")


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise CorruptFileError(f"{path}: not a training report")
            records = list(reader)
        if not records:
            raise CorruptFileError(f"{path}: no epochs")
        last = records[-1]
        rows.append([str(path), last["method"], len(records), last["eval_acc"], last["eval_loss"],
                     last["z_target"], last["z_bg"], last["gap"]])
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wmss", description="Weak-driven training laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify-theory", help="numerically certify the logit-mixing results")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--dim", type=int, default=16)
    v.add_argument("--out")
    v.set_defaults(fn=cmd_verify_theory)

    t = sub.add_parser("train", help="train one method and write checkpoints and a report")
    t.add_argument("--method", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep-lambda", help="WMSS accuracy across mixing coefficients")
    s.add_argument("--grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    a = sub.add_parser("analyze", help="logit statistics of a checkpoint on a corpus")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--corpus", required=True)
    a.add_argument("--n", type=int, default=200)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(fn=cmd_analyze)

    r = sub.add_parser("report", help="summarise final epochs of training reports")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"wmss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "method", None) is not None and args.method not in METHODS:
        print(f"wmss: error: unknown method {args.method!r}; choose from {', '.join(METHODS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"wmss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"wmss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFileError, OSError) as exc:
        print(f"wmss: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
