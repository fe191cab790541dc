"""Command-line entry point.

Subcommands: verify, project, train, sweep, bench, stats. Exit codes:
0 success, 1 invariant or runtime violation, 2 input or config error.
All outputs are reproducible byte-for-byte for identical inputs and seeds;
wall-clock timings are confined to the wall_ms record field and the bench
table, which makes no determinism promise.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from fractions import Fraction
from statistics import median

import numpy as np

from .core import (
    MonarchConfig,
    apply,
    apply_flops,
    dense_flops,
    load_checkpoint,
    random_adapter,
    save_checkpoint,
)
from .errors import NumericalError, StructuralError
from .harness import (
    RECORD_HEADER,
    TrainConfig,
    record_csv_row,
    sweep,
    train,
    weight_stats,
    write_records,
)
from .numerics import fro_norm_sq, read_matrix
from .projection import channel_set, project
from .suites import SUITE_NAMES, run_suite

CONFIG_FORMAT_VERSION = 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monarch-peft",
        description="Rectangular Monarch adapters: verification, projection, training, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run seeded invariant suites")
    p_verify.add_argument("--suite", choices=SUITE_NAMES, default="all")
    p_verify.add_argument("--seed", type=int, default=42)
    p_verify.add_argument("--out", help="write the JSON report here")

    p_project = sub.add_parser("project", help="project a dense matrix onto a Monarch class")
    p_project.add_argument("--input", required=True, help="matrix text file")
    p_project.add_argument("--blocks", type=int, default=4)
    p_project.add_argument("--block-rank", type=int, required=True)
    p_project.add_argument("--seed", type=int, default=42)
    p_project.add_argument("--out", help="write the fitted adapter checkpoint here")

    p_train = sub.add_parser("train", help="run one training trial from a config document")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help="write the records CSV here")
    p_train.add_argument("overrides", nargs="*", help="field=value overrides")

    p_sweep = sub.add_parser("sweep", help="run a grid of trials from a config document")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", help="write the records CSV here")
    p_sweep.add_argument("overrides", nargs="*", help="field=value overrides")

    p_bench = sub.add_parser("bench", help="FLOP model plus measured apply timings")
    p_bench.add_argument("--n", type=int, default=4096)
    p_bench.add_argument("--blocks", type=int, default=4)
    p_bench.add_argument("--block-rank", type=int, default=8)
    p_bench.add_argument("--batch", type=int, default=32)
    p_bench.add_argument("--repeats", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=42)

    p_stats = sub.add_parser("stats", help="per-factor weight statistics of a checkpoint")
    p_stats.add_argument("--checkpoint", required=True)
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StructuralError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StructuralError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StructuralError("config document must be a JSON object")
    return doc


_FIELD_TYPES = {f.name: f for f in fields(TrainConfig)}


def _coerce_field(key: str, value):
    if key not in _FIELD_TYPES:
        raise StructuralError(f"unknown config field {key!r}")
    hint = _FIELD_TYPES[key].type
    try:
        if hint == "str":
            return str(value)
        if hint == "int":
            if isinstance(value, str):
                return int(value)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"expected integer, got {value!r}")
            return value
        if hint == "float":
            return float(value)
        if hint == "int | None":
            if value is None or value == "none":
                return None
            return int(value)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"config field {key!r}: {exc}") from exc
    raise StructuralError(f"config field {key!r} has unsupported type {hint}")


def _train_config_from_document(doc: dict, overrides: list) -> tuple[TrainConfig, list]:
    doc = dict(doc)
    version = doc.pop("format_version", None)
    if version != CONFIG_FORMAT_VERSION:
        raise StructuralError(
            f"config document must declare format_version: {CONFIG_FORMAT_VERSION}"
        )
    grid = doc.pop("grid", [])
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise StructuralError("field 'grid' must be a list of objects")
    for key in ("task", "n"):
        if key not in doc:
            raise StructuralError(f"config document missing field {key!r}")
    values = {key: _coerce_field(key, value) for key, value in doc.items()}
    for item in overrides:
        if "=" not in item:
            raise StructuralError(f"override {item!r} must look like field=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if "." in key:
            raise StructuralError(f"override key {key!r} does not address a known field")
        values[key] = _coerce_field(key, raw.strip())
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg, grid


def _print_report_summary(report: dict) -> None:
    suites = report.get("suites", [report])
    for suite in suites:
        for check in suite["checks"]:
            status = "ok" if check["passed"] else "VIOLATED"
            detail = {
                k: v for k, v in check.items() if k not in ("name", "passed")
            }
            detail_text = ", ".join(f"{k}={_fmt(v)}" for k, v in detail.items())
            print(f"[{suite['suite']}] {check['name']}: {status} ({detail_text})")
    print(f"violations: {report['violations']}")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.3e}"
    return value


def cmd_verify(args) -> int:
    report = run_suite(args.suite, seed=args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    _print_report_summary(report)
    return 0 if report["violations"] == 0 else 1


def cmd_project(args) -> int:
    matrix = read_matrix(args.input)
    if matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"projection needs a square matrix, got {matrix.shape}")
    config = MonarchConfig(matrix.shape[0], args.blocks, args.block_rank)
    report = project(matrix, config)
    mass = fro_norm_sq(matrix)
    ratio = report.error_sq / mass if mass > 0 else 0.0
    print(f"n={config.n} blocks={config.blocks} block_rank={config.block_rank} seed={args.seed}")
    print(f"error_sq: {report.error_sq:.17g}")
    print(f"ratio: {ratio:.9f}")
    print("k_out,k_in,channels,residual_sq")
    channels = channel_set(config)
    for (k_out, k_in), residual in sorted(report.per_block_residuals.items()):
        print(f"{k_out},{k_in},{channels.count(k_out, k_in)},{residual:.17g}")
    if args.out:
        save_checkpoint(report.adapter, args.out, seed=args.seed)
        print(f"checkpoint written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, _grid = _train_config_from_document(_load_json(args.config), args.overrides)
    record = train(cfg)
    if args.out:
        write_records([record], args.out)
    print(RECORD_HEADER)
    print(record_csv_row(record))
    if record.diverged_at is not None:
        print(f"diverged at step {record.diverged_at}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg, grid = _train_config_from_document(_load_json(args.config), args.overrides)
    if not grid:
        raise StructuralError("sweep config needs a non-empty 'grid' list")
    result = sweep(cfg, grid)
    if args.out:
        write_records(result.records, args.out)
    print(RECORD_HEADER)
    for record in result.records:
        print(record_csv_row(record))
    for point, reason in result.skipped:
        print(f"skipped {json.dumps(point, sort_keys=True)}: {reason}", file=sys.stderr)
    if any(rec.diverged_at is not None for rec in result.records):
        return 1
    return 0


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise StructuralError("repeats must be >= 1")
    if args.batch < 1:
        raise StructuralError("batch must be >= 1")
    config = MonarchConfig(args.n, args.blocks, args.block_rank)
    adapter = random_adapter(config, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.batch, args.n))
    dense = rng.standard_normal((args.n, args.n))

    monarch = apply_flops(config, args.batch)
    full = dense_flops(args.n, args.batch)
    ratio = Fraction(monarch, full)

    def _time(fn) -> float:
        samples = []
        for _ in range(args.repeats):
            start = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - start) * 1e3)
        return median(samples)

    apply(adapter, x)  # warm up
    x @ dense.T
    t_monarch = _time(lambda: apply(adapter, x))
    t_dense = _time(lambda: x @ dense.T)

    print(f"n={args.n} blocks={args.blocks} block_rank={args.block_rank} batch={args.batch}")
    print(f"monarch_flops: {monarch}")
    print(f"dense_flops: {full}")
    print(f"flop_ratio: {ratio} ({float(ratio):.6e})")
    print(f"monarch_wall_ms_median: {t_monarch:.3f}")
    print(f"dense_wall_ms_median: {t_dense:.3f}")
    throughput = monarch / (t_monarch * 1e-3) if t_monarch > 0 else float("inf")
    print(f"monarch_throughput_flops_per_s: {throughput:.3e}")
    return 0


def cmd_stats(args) -> int:
    adapter, seed = load_checkpoint(args.checkpoint)
    cfg = adapter.config
    print(f"n={cfg.n} blocks={cfg.blocks} block_rank={cfg.block_rank} seed={seed}")
    stats = weight_stats(adapter)
    for factor in stats.factors:
        print(
            f"{factor.name}: count={factor.count} mean={factor.mean:.6e} "
            f"std={factor.std:.6e} excess_kurtosis={factor.excess_kurtosis:.4f}"
        )
        print(f"{factor.name} histogram: " + " ".join(str(c) for c in factor.histogram))
    return 0


_COMMANDS = {
    "verify": cmd_verify,
    "project": cmd_project,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StructuralError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
