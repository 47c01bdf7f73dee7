"""``pdflow run|sweep|check`` command-line interface."""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from .config import load_run, load_sweep, parse_run
from .errors import ConfigError
from .pipeline import (EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, check_report, execute, fmt, jsonable,
                       write_csv)

SWEEP_HEADER = ("cell", "overrides", "exit_code", "gap_fitted", "gap_theoretical", "gap_pass",
                "feasibility_fitted", "feasibility_theoretical", "feasibility_pass",
                "speed_fitted", "speed_theoretical", "speed_pass", "pass")


def _out_dir(flag: str | None, cfg_out: str | None) -> Path:
    return Path(flag or cfg_out or os.environ.get("PDFLOW_OUT") or "pdflow_out")


@click.group()
@click.version_option(package_name="pdflow")
def main():
    """Simulate and audit inertial primal-dual flows."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: config 'outputs', $PDFLOW_OUT, ./pdflow_out).")
@click.option("--tol-scale", type=float, default=1.0, show_default=True,
              help="Multiply integrator tolerances by this factor.")
def run(config, out, tol_scale):
    """Integrate one configuration and write trajectory.csv, audit.json, rates.csv."""
    try:
        cfg = load_run(config)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    res = execute(cfg, _out_dir(out, cfg.outputs), tol_scale)
    stream_err = res.exit_code != EXIT_OK
    click.echo(res.message, err=stream_err)
    for row in res.rates:
        click.echo(f"  {row[0]:<12} fitted {fmt(row[4]):<22} theory {fmt(row[5]):<22} "
                   f"{'pass' if row[6] else 'FAIL'}")
    sys.exit(res.exit_code)


def _cell(args):
    idx, doc, out, tol_scale = args
    cfg = parse_run(doc)
    res = execute(cfg, out / f"cell_{idx:04d}", tol_scale)
    return idx, res.exit_code, res.rates


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), default=None)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Cells run concurrently in up to this many processes.")
@click.option("--tol-scale", type=float, default=1.0, show_default=True)
def sweep(config, out, jobs, tol_scale):
    """Run every cell of a parameter grid and summarize them in sweep.csv."""
    try:
        overrides, cfgs = load_sweep(config)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = _out_dir(out, cfgs[0].outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(i, c.model_dump(by_alias=True, exclude_none=True), out_dir, tol_scale)
             for i, c in enumerate(cfgs)]
    if jobs == 1:
        results = [_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell, tasks))
    rows, all_ok = [], True
    for (idx, code, rates), ov in zip(sorted(results), overrides):
        by_q = {r[0]: r for r in rates}
        row = [idx, json.dumps(ov, sort_keys=True, separators=(";", "=")), code]
        for q in ("gap", "feasibility", "speed"):
            r = by_q.get(q)
            row += [r[4], r[5], r[6]] if r else [None, None, None]
        ok = code == EXIT_OK
        all_ok &= ok
        rows.append(row + [ok])
        click.echo(f"cell {idx}: {ov} -> exit {code}")
    write_csv(out_dir / "sweep.csv", SWEEP_HEADER, rows)
    sys.exit(EXIT_OK if all_ok else EXIT_AUDIT)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
def check(config):
    """Classify the regime and report certificates without integrating."""
    try:
        cfg = load_run(config)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    code, report = check_report(cfg)
    click.echo(json.dumps(jsonable(report), indent=2, sort_keys=True))
    sys.exit(code)


if __name__ == "__main__":  # pragma: no cover
    main()
