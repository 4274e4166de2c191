"""Command-line entry point: ``run``, ``gen-synthetic`` and ``eval``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import load_config, parse_synthetic_spec
from .data import generate_synthetic, save_dataset
from .errors import ConfigError, DataError, FmcscError
from .evaluation import kmeans, score
from .experiment import emit_report, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmcsc", description="Federated multi-view clustering simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federated experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic multi-view dataset")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="re-cluster an emitted embedding.csv")
    ev.add_argument("--embedding", required=True)
    ev.add_argument("--k", type=int, required=True)
    ev.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    config = dataclasses.replace(config, **overrides)
    config.validate()
    report = run_experiment(config)
    emit_report(report, config.output_dir)
    final = report.final
    print(f"final acc={final.acc:.4f} nmi={final.nmi:.4f} ari={final.ari:.4f} ({report.wall_time:.1f}s) -> {config.output_dir}")
    return 0


def _cmd_gen(args) -> int:
    path = Path(args.spec)
    if not path.is_file():
        raise ConfigError(f"spec file not found: {path}")
    spec = parse_synthetic_spec(path.read_text())
    try:
        save_dataset(generate_synthetic(spec), args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset: {exc.strerror}", args.out) from None
    print(f"wrote {spec.samples} samples x {spec.views} views to {args.out}")
    return 0


def read_embedding(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    p = Path(path)
    try:
        with p.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read embedding: {exc.strerror}", str(p)) from None
    if not rows or rows[0][:2] != ["x", "y"] or "true_label" not in rows[0]:
        raise DataError("embedding header must start with x,y and contain true_label", str(p))
    col = rows[0].index("true_label")
    try:
        points = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
        truth = np.array([int(r[col]) for r in rows[1:]])
    except (ValueError, IndexError):
        raise DataError("malformed embedding row", str(p)) from None
    return points.reshape(-1, 2), truth


def _cmd_eval(args) -> int:
    points, truth = read_embedding(args.embedding)
    assignment = kmeans(points, args.k, seed=args.seed)
    m = score(assignment.labels, truth)
    print(f"acc={m.acc!r} nmi={m.nmi!r} ari={m.ari!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "gen-synthetic": _cmd_gen, "eval": _cmd_eval}[args.command]
    try:
        return handler(args)
    except FmcscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
