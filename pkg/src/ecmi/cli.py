"""Command-line entry point: ``ecmi <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 usage or config error.

Colors used in SVG output (fixed):
  interpolation #9467bd, binary_kl #1f77b4, linear #2ca02c, sqrt #d62728, trivial #bbbbbb
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from . import analyze, bounds as bd, verify
from .core import SCHEMA_VERSION, DimensionError, DomainError, EstimationError, TrialBatch, _jsonable
from .estimators import EXACT_MAX_N, SampledModeWarning, ecmi_matrix, full_table_kl
from .simulate import ConfigError, SimConfig, check_estimable, run_experiment, supersample_law

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

COLOR_HELP = ("SVG colors: interpolation purple #9467bd, binary_kl blue #1f77b4, linear green #2ca02c, "
              "sqrt red #d62728, trivial grey #bbbbbb")


class UsageError(Exception):
    pass


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("ECMI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"ECMI_THREADS must be an integer, got {env!r}") from exc
    return 1


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _csv_header(meta: dict[str, Any]) -> str:
    return f"# schema={SCHEMA_VERSION} config={json.dumps(_jsonable(meta), sort_keys=True)}\n"


def _svg_with_meta(svg: str, meta: dict[str, Any]) -> str:
    comment = f"<!-- schema={SCHEMA_VERSION} config={json.dumps(_jsonable(meta), sort_keys=True)} -->\n"
    return svg.replace("\n", "\n" + comment, 1)


def _strip_comments(text: str) -> str:
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def _load_batch(path: str) -> TrialBatch:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read batch {path}: {exc}") from exc
    if path.endswith(".csv"):
        return TrialBatch.from_csv(_strip_comments(text))
    try:
        return TrialBatch.from_json(text)
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"{path} is not a batch file: {exc}") from exc


# --- subcommands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    data = json.loads(text) if text.strip() else {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.bins is not None:
        data["bins"] = args.bins
    config = SimConfig.from_dict(data)
    check_estimable(config)
    batch, stats = run_experiment(config, threads=_threads(args.threads))
    if args.format == "csv":
        out = _csv_header(config.to_dict()) + batch.to_csv()
    elif args.format == "json":
        out = batch.to_json() + "\n"
    else:
        raise UsageError("simulate writes json or csv")
    _write(args.out, out)
    sys.stderr.write(f"true gap {stats.mean:.6f} +/- {stats.se:.6f} over {config.k1}x{config.k2} draws\n")
    return EXIT_OK


def cmd_estimate(args) -> int:
    batch = _load_batch(args.batch)
    E = ecmi_matrix(batch, args.bins)
    out = {"schema": SCHEMA_VERSION, "config": batch.config, "bins": args.bins,
           "ecmi": E, "ecmi_mean": E.mean(axis=0), "ecmi_average": float(E.mean())}
    _write(args.out, _dump(out))
    return EXIT_OK


def _high_probability(batch: TrialBatch, delta: float) -> list[dict[str, Any]]:
    cfg = None
    if batch.config and batch.features is not None and batch.n <= EXACT_MAX_N:
        try:
            cfg = SimConfig.from_dict(dict(batch.config))
        except ConfigError:
            cfg = None
    rows = []
    for j in range(batch.k1):
        if cfg is not None:
            kl = full_table_kl(batch, j, law=supersample_law(cfg, batch, j).law)
            mode = "exact"
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SampledModeWarning)
                kl = full_table_kl(batch, j)
            mode = "sampled (biased upwards)"
        train_r = float(batch.train_loss[j].mean())
        rows.append({"supersample": j, "kl": kl, "mode": mode, "train_loss": train_r,
                     "sqrt_bound": bd.highprob_sqrt_bound(kl, batch.n, delta),
                     "kl_bound": bd.highprob_kl_bound(kl, batch.n, delta, train_r)})
    return rows


def cmd_bounds(args) -> int:
    batch = _load_batch(args.batch)
    which = None if args.bound == "all" else {args.bound}
    if which is not None and args.bound not in bd.BOUND_NAMES:
        raise UsageError(f"unknown bound {args.bound!r}; choose from all, {', '.join(bd.BOUND_NAMES)}")
    if args.bound == "mi_seeger":
        raise UsageError("mi_seeger needs hypothesis-level information; it is not computed from a loss batch")
    report = analyze.experiment_report(batch, bins=args.bins, which=which)
    out = report.to_dict()
    if args.delta is not None:
        if not 0 < args.delta < 1:
            raise UsageError("--delta must lie in (0, 1)")
        out["high_probability"] = {"delta": args.delta, "per_supersample": _high_probability(batch, args.delta)}
    sys.stderr.write(report.table() + "\n")
    for rep in report.bounds:
        if not rep.applicable:
            sys.stderr.write(f"{rep.name}: not applicable ({rep.note})\n")
    _write(args.out, _dump(out))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.maurer_n is not None:
        if not 1 <= args.maurer_n <= 30:
            raise UsageError("--maurer-n must lie in 1..30")
        results = verify.default_suite(args.seed, maurer_n=[args.maurer_n])
        if args.out is None:
            sys.stdout.write(f"{results[0].statistic:.5f}\n")
    else:
        results = verify.default_suite(args.seed, mc_samples=args.mc_samples)
    passed = all(r.passed for r in results)
    doc = {"schema": SCHEMA_VERSION, "config": {"seed": args.seed, "maurer_n": args.maurer_n,
                                                "mc_samples": args.mc_samples},
           "passed": passed, "checks": [r.to_dict() for r in results]}
    if args.out is not None or args.maurer_n is None:
        _write(args.out, _dump(doc))
    failed = [r for r in results if not r.passed]
    for r in failed:
        sys.stderr.write(f"FAILED {r.name} {r.inputs}: {r.statistic} vs {r.threshold}\n")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def _b_grid(args) -> np.ndarray:
    return np.geomspace(args.b_min, args.b_max, args.b_points)


def cmd_compare(args) -> int:
    meta = {"mode": args.mode, "b_min": args.b_min, "b_max": args.b_max, "b_points": args.b_points,
            "l_min": args.l_min, "l_max": args.l_max, "l_points": args.l_points, "B": args.B}
    if args.mode == "ordering":
        res = analyze.ordering_check(args.B)
        if args.format == "json":
            _write(args.out, _dump({"schema": SCHEMA_VERSION, "config": meta, "values": res.values,
                                    "order": res.order}))
        else:
            lines = [f"{name} {res.values[name]:.6f}" for name in res.order]
            _write(args.out, _csv_header(meta) + "bound,value\n" +
                   "".join(f"{name},{res.values[name]!r}\n" for name in res.order))
            if args.out is not None:
                sys.stdout.write("\n".join(lines) + "\n")
        return EXIT_OK
    if args.mode == "regions":
        rmap = analyze.region_map(_b_grid(args), np.linspace(args.l_min, args.l_max, args.l_points))
        csv_text = _csv_header(meta) + rmap.to_csv()
        svg_text = _svg_with_meta(analyze.region_svg(rmap), meta)
        counts = {lab: int((rmap.labels == lab).sum()) for lab in analyze.REGION_LABELS}
        sys.stderr.write("region cells: " + ", ".join(f"{k}={v}" for k, v in counts.items()) + "\n")
    else:
        curve = analyze.curves(_b_grid(args))
        csv_text = _csv_header(meta) + analyze.curves_csv(curve)
        svg_text = _svg_with_meta(analyze.curves_svg(curve), meta)
    if args.format == "svg":
        _write(args.out, svg_text)
    elif args.format == "csv":
        _write(args.out, csv_text)
        if args.out not in (None, "-"):
            Path(args.out).with_suffix(".svg").write_text(svg_text)
    else:
        raise UsageError("regions and curves write csv or svg")
    return EXIT_OK


def cmd_plot(args) -> int:
    """Re-render an SVG from a CSV written by ``compare``."""
    import csv
    import io
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from exc
    meta_line = next((l for l in text.splitlines() if l.startswith("# schema=")), None)
    meta = json.loads(meta_line.split("config=", 1)[1]) if meta_line else {}
    rows = list(csv.DictReader(io.StringIO(_strip_comments(text))))
    if not rows:
        raise UsageError("empty CSV")
    if "winner" in rows[0]:
        Bs = sorted({float(r["B"]) for r in rows})
        Ls = sorted({float(r["train_loss"]) for r in rows})
        labels = np.empty((len(Ls), len(Bs)), dtype=object)
        vals = {k: np.empty(labels.shape) for k in ("binary_kl", "linear", "sqrt")}
        bi = {b: c for c, b in enumerate(Bs)}
        li = {v: r for r, v in enumerate(Ls)}
        for row in rows:
            r, c = li[float(row["train_loss"])], bi[float(row["B"])]
            labels[r, c] = row["winner"]
            for k in vals:
                vals[k][r, c] = float(row[k])
        svg = analyze.region_svg(analyze.RegionMap(np.array(Bs), np.array(Ls), labels.astype(str), vals))
    elif "interpolation" in rows[0]:
        curve = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
        svg = analyze.curves_svg(curve)
    else:
        raise UsageError("CSV is neither a region map nor a curve table")
    _write(args.out, _svg_with_meta(svg, meta))
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecmi", description="Evaluated-CMI generalization bound toolkit.",
                                epilog=COLOR_HELP)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a toy experiment and write the batch")
    s.add_argument("--config", required=True, help="JSON config (learner, n, k1, k2, seed required)")
    s.add_argument("--out", help="output path (default stdout)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--bins", type=int, help="override the config bin count")
    s.add_argument("--threads", type=int, help="worker cap (default: ECMI_THREADS or 1)")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="per-row e-CMI estimates of a batch")
    e.add_argument("batch")
    e.add_argument("--bins", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bounds", help="evaluate bounds on a batch against the exact gap")
    b.add_argument("batch")
    b.add_argument("--bound", default="all", help=f"all or one of: {', '.join(bd.BOUND_NAMES)}")
    b.add_argument("--bins", type=int)
    b.add_argument("--delta", type=float, help="also report the high-probability bounds at this delta")
    b.add_argument("--threads", type=int)
    b.add_argument("--format", choices=("json",), default="json")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    v = sub.add_parser("verify", help="run the concentration-inequality checks")
    v.add_argument("--maurer-n", type=int, help="only the binomial lower-bound check at this n; prints it")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--mc-samples", type=int, default=200_000)
    v.add_argument("--threads", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="bound ordering, region map, or curves", epilog=COLOR_HELP)
    c.add_argument("--mode", choices=("ordering", "regions", "curves"), required=True)
    c.add_argument("--B", type=float, default=0.1, help="e-CMI value for ordering mode")
    c.add_argument("--b-min", type=float, default=1e-3)
    c.add_argument("--b-max", type=float, default=1.0)
    c.add_argument("--b-points", type=int, default=50)
    c.add_argument("--l-min", type=float, default=0.0)
    c.add_argument("--l-max", type=float, default=0.5)
    c.add_argument("--l-points", type=int, default=50)
    c.add_argument("--format", choices=("csv", "svg", "json"), default="csv")
    c.add_argument("--threads", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render an SVG from a compare CSV", epilog=COLOR_HELP)
    pl.add_argument("input")
    pl.add_argument("--out")
    pl.add_argument("--format", choices=("svg",), default="svg")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (DomainError, DimensionError, EstimationError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
