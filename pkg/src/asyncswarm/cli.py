"""Command-line entry point: ``asyncswarm run`` and ``asyncswarm sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import yaml

from .model import ConfigurationError
from .runner import run_scenario
from .scenario import ScenarioError, apply_overrides, from_dict, read_raw
from .telemetry import write_results

EXIT_CONVERGED, EXIT_ERROR, EXIT_CAP = 0, 1, 2

log = logging.getLogger("asyncswarm")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncswarm", description="Asynchronous consensus trajectory planning for UAV swarms.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("scenario", help="scenario file or bundled name (e.g. default)")
    run.add_argument("--mode", choices=("async", "sync"), help="override the scenario's run mode")
    run.add_argument("--seed", type=int, help="override protocol.seed")
    run.add_argument("--out", default="runs", help="output root directory (default: runs)")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a scenario field, e.g. protocol.p_con=0.5")
    run.add_argument("--execution", choices=("inline", "threaded"), default="inline", help="worker execution mode")

    sweep = sub.add_parser("sweep", help="run a scenario once per grid entry")
    sweep.add_argument("scenario")
    sweep.add_argument("--grid", required=True, help="YAML file: a list of override mappings, e.g. [{protocol.p_con: 0.5}]")
    sweep.add_argument("--out", default="runs")
    sweep.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sweep.add_argument("--execution", choices=("inline", "threaded"), default="inline")
    return ap


def _config(scenario, overrides, mode=None, seed=None):
    extra = list(overrides)
    if mode:
        extra.append(f"mode={mode}")
    if seed is not None:
        extra.append(f"protocol.seed={seed}")
    return from_dict(apply_overrides(read_raw(scenario), extra))


def run_dir(out_root, cfg, seed) -> Path:
    return Path(out_root) / f"{cfg.name}_seed{seed}"


def _run_one(cfg, out_root, execution, label=None):
    result, sim = run_scenario(cfg, execution=execution)
    out = run_dir(out_root, cfg, result.seed)
    if label:
        out = out.with_name(f"{out.name}_{label}")
    write_results(result, out, sim.trace)
    return result, out


def cmd_run(args) -> int:
    cfg = _config(args.scenario, args.overrides, args.mode, args.seed)
    result, out = _run_one(cfg, args.out, args.execution)
    times = " ".join(f"{t:.3f}" for t in result.terminal_times)
    print(f"{result.status}: {result.commits} commits, terminal times [{times}] s -> {out}")
    return EXIT_CONVERGED if result.converged else EXIT_CAP


def load_grid(path) -> list[dict]:
    try:
        grid = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError("<grid>", f"cannot read {path}: {exc}") from exc
    if grid is None:
        return []
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise ScenarioError("<grid>", "expected a list of override mappings")
    return grid


def sweep(scenario, grid, out_root, base_overrides=(), execution="inline") -> list[dict]:
    """One run per grid entry (a single default run for an empty grid)."""
    rows = []
    for n, entry in enumerate(grid or [{}]):
        overrides = list(base_overrides) + [f"{k}={json.dumps(v)}" for k, v in entry.items()]
        label = "_".join(f"{k.split('.')[-1]}{v}" for k, v in entry.items()) or "base"
        row = {"run": n, "overrides": " ".join(overrides) or "-"}
        try:
            cfg = _config(scenario, overrides)
            result, out = _run_one(cfg, out_root, execution, label=f"{n}_{label}")
            row.update(
                status=result.status,
                commits=result.commits,
                virtual_time=f"{result.virtual_time:.3f}",
                wall_time=f"{result.wall_time:.2f}",
                terminal_times=" ".join(f"{t:.3f}" for t in result.terminal_times),
                out=str(out),
            )
        except (ConfigurationError, OSError, RuntimeError, FloatingPointError) as exc:
            log.error("sweep entry %d failed: %s", n, exc)
            row.update(status=f"error: {exc}")
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid)
    rows = sweep(args.scenario, grid, args.out, args.overrides, args.execution)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    fields = ["run", "overrides", "status", "commits", "virtual_time", "wall_time", "terminal_times", "out"]
    table = Path(args.out) / "sweep.csv"
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", restval="")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['run']:>3} {r['status']:<10} commits={r.get('commits', '-'):>5} vt={r.get('virtual_time', '-'):>10}  {r['overrides']}")
    print(f"table -> {table}")
    if any(r["status"].startswith("error") for r in rows):
        return EXIT_ERROR
    return EXIT_CONVERGED if all(r["status"] == "converged" for r in rows) else EXIT_CAP


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_sweep(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
