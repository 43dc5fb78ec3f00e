"""Command line: ``progexp run <config>``, ``progexp list-checks``, ``progexp emit-plot-data <config>``.

Exit status: 0 when every check passes, 1 when a check fails, 2 on a
configuration error.  Set ``PROGEXP_THREADS`` to choose the number of
simulation threads; outputs do not depend on it.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checks import REGISTRY, Context, list_checks, run_check
from .scenario import ConfigError, Scenario, load_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
CSV_COLUMNS = ("path", "t", "W", "Z", "drift_before", "drift_after", "martingale_part")
DEFAULT_PLOT_PATHS = 5


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits and insertion-ordered keys."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{to_json(str(k))}: {to_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + to_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, Path):
        obj = str(obj)
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{out}"'
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def scenario_echo(sc: Scenario) -> dict:
    return {
        "id": sc.id,
        "grid": {"T": sc.T, "K": sc.K},
        "ensemble": {"n_paths": sc.n_paths, "seed": sc.seed, "stream_offset": sc.stream_offset},
        "model": {k: sc.model_block[k] for k in sorted(sc.model_block)},
        "martingale": {"integrand": list(sc.integrand), "component": sc.component,
                       "mode": sc.mode, "plug": sc.plug, "bracket": sc.bracket},
        "tests": list(sc.tests),
    }


def write_paths_csv(ctx: Context, path: Path, n_paths: int) -> None:
    dec = ctx.decomposition
    W = dec.original.values if ctx.martingale.m is None else \
        ctx.ensemble.values[:, :, ctx.martingale.component]
    Z = ctx.azema
    t = ctx.grid.nodes
    lines = [",".join(CSV_COLUMNS)]
    for p in range(min(n_paths, ctx.n_paths)):
        for i in range(t.size):
            row = (t[i], W[p, i], Z[p, i], dec.drift_before.values[p, i],
                   dec.drift_after.values[p, i], dec.martingale_part.values[p, i])
            lines.append(f"{p}," + ",".join(fmt_float(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def run_scenario(sc: Scenario, out_dir: Optional[Path] = None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    out_dir = Path(sc.output_dir if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(sc)
    results = [run_check(name, ctx) for name in sc.tests]
    passed = all(r.passed for r in results)
    report = {
        "scenario": scenario_echo(sc),
        "passed": passed,
        "checks": [
            {"name": r.name, "passed": r.passed, "metrics": r.metrics,
             "notes": r.notes, "records": r.records}
            for r in results
        ],
    }
    (out_dir / "report.json").write_text(to_json(report) + "\n")
    summary = [f"scenario {sc.id}: {'PASS' if passed else 'FAIL'}"]
    for r in results:
        shown = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in r.metrics.items() if not isinstance(v, list))
        summary.append(f"  {'PASS' if r.passed else 'FAIL'}  {r.name}  {shown}")
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    if sc.sample_paths:
        write_paths_csv(ctx, out_dir / "paths.csv", sc.sample_paths)
    print("\n".join(summary), file=stream)
    return EXIT_OK if passed else EXIT_FAIL


def emit_plot_data(sc: Scenario, out_dir: Optional[Path] = None) -> Path:
    # paths are keyed by index, so a small ensemble reproduces the first rows of the full one
    n = sc.sample_paths or DEFAULT_PLOT_PATHS
    out_dir = Path(sc.output_dir if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(sc, n_paths=min(n, sc.n_paths))
    target = out_dir / "paths.csv"
    write_paths_csv(ctx, target, n)
    return target


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="progexp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the checks of a scenario file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    sub.add_parser("list-checks", help="list available checks")
    emit = sub.add_parser("emit-plot-data", help="write sampled paths to paths.csv")
    emit.add_argument("config")
    emit.add_argument("--out", help="output directory (overrides the config)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-checks":
        print(list_checks())
        return EXIT_OK
    try:
        sc = load_scenario(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    if args.command == "run":
        return run_scenario(sc, out)
    print(emit_plot_data(sc, out))
    return EXIT_OK


__all__ = ["main", "run_scenario", "emit_plot_data", "to_json", "REGISTRY"]
