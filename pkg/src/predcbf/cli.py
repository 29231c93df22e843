"""Command-line entry point.

Exit codes: 0 ok, 1 check failure, 2 config or validation error, 3 query
error, 4 invalid shift schedule.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import finite_or_str, load_config
from .constraint import ConfigError, validate_spec
from .dynamics import DynamicsError
from .filter_sim import Barrier, FilterError, simulate
from .grid import (
    GridError,
    GridFormatError,
    check_grid,
    check_monotone,
    compute_capital_lambda,
    interpolate_batch,
    load,
    save,
    slice_2d,
    synthesize_grid,
)
from .shift import ScheduleError, check_shiftable
from .synthesis import SynthesisError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_QUERY, EXIT_SCHEDULE = 0, 1, 2, 3, 4


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_synth(args) -> int:
    try:
        rc = load_config(args.config)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    report = validate_spec(rc.spec, rc.field, rc.domain, rc.subset, rc.counts)
    if not report.ok and not args.force:
        _err("parameter validation failed:")
        _err(report.format())
        return EXIT_CONFIG
    threads = args.threads or rc.threads or os.cpu_count() or 1
    seed = rc.seed if args.seed is None else args.seed
    t0 = time.perf_counter()
    try:
        grid = synthesize_grid(rc.spec, rc.system, rc.field, rc.subset, rc.domain, rc.counts,
                               threads=threads, seed=seed, override=args.force, config=rc.raw)
    except (SynthesisError, GridError, DynamicsError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    crc = save(grid, args.out)
    st = grid.meta["stats"]
    print(f"points: {st['points']}")
    print(f"solved: {st['solved']}  f_shortcut: {st['f_shortcut']}  infeasible: {st['infeasible']}")
    print(f"wall time: {wall:.2f} s  threads: {threads}")
    print(f"crc32c: {crc:08x}")
    return EXIT_OK


def _parse_states(text: str) -> np.ndarray:
    p = Path(text)
    if p.is_file():
        rows = [r for r in csv.reader(p.read_text().splitlines()) if r and not r[0].startswith("#")]
    else:
        rows = [r.split(",") for r in text.split(";")]
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


def cmd_eval(args) -> int:
    try:
        grid = load(args.grid)
    except (OSError, GridFormatError) as exc:
        _err(str(exc))
        return EXIT_QUERY
    try:
        X = _parse_states(args.state)
        vals, _, touched = interpolate_batch(grid, X)
    except (ValueError, GridError) as exc:
        _err(f"query failed: {exc}")
        return EXIT_QUERY
    for x, v, bad in zip(X, vals, touched):
        line = ",".join("%.17g" % c for c in x) + f" -> H={v:.17g}"
        if bad:
            line += " (infeasible cell)"
        print(line)
    if grid.saturated:
        print(f"saturation_level={grid.saturation_level:.17g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        rc = load_config(args.config)
        if rc.simulate is None:
            raise ConfigError("config has no 'simulate' block")
        grids = [load(p) for p in args.grid]
        schedules = rc.schedules_for(len(grids))
        for p, g in zip(args.grid, grids):
            if g.dim != rc.system.state_dim or g.meta["model"]["id"] != rc.system.model_id:
                raise ConfigError(f"grid {p} was synthesized for another model")
    except (ConfigError, ScheduleError, OSError, GridFormatError) as exc:
        _err(str(exc))
        return EXIT_CONFIG

    t_end = float(rc.simulate["t_end"])
    failed = False
    for p, g, s in zip(args.grid, grids, schedules):
        rep = check_shiftable(s, g.alpha, compute_capital_lambda(g), t_end)
        if not rep.passed:
            failed = True
            _err(f"{p}: {rep.format()}")
    if failed and not args.force:
        return EXIT_SCHEDULE

    barriers = [Barrier(g, s) for g, s in zip(grids, schedules)]
    try:
        log = simulate(rc.system, rc.simulate.get("dt"), barriers, rc.filter, rc.simulate["x0"], t_end,
                       rc.target_line(), rc.gains(), config=rc.raw)
    except (FilterError, DynamicsError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    log.to_csv(args.out)
    a = log.arrays()
    print(f"steps: {len(log.t)}")
    if barriers:
        print(f"min H_shifted: {a['H_shifted_min'].min():.6g}  min h: {a['h_min'].min():.6g}")
    return EXIT_OK


def cmd_check(args) -> int:
    report: dict = {"grid": str(args.grid)}
    try:
        grid = load(args.grid)
    except (OSError, GridFormatError) as exc:
        report.update(passed=False, checks={"file_integrity": {"passed": False, "error": str(exc)}})
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
        _err(f"file_integrity: {exc}")
        return EXIT_CHECK
    res = check_grid(grid)
    report.update(res)
    if args.grid2:
        try:
            g2 = load(args.grid2)
            mono = check_monotone(grid, g2)
            mono["capital_lambda"] = finite_or_str(mono["capital_lambda"])
        except (OSError, GridError) as exc:
            mono = {"passed": False, "error": str(exc)}
        report["monotonicity"] = mono
        report["passed"] = report["passed"] and mono["passed"]
    lam = report["checks"]["capital_lambda"]
    lam["value"] = finite_or_str(lam["value"])
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    failed = [k for k, v in report["checks"].items() if not v["passed"]]
    if "monotonicity" in report and not report["monotonicity"]["passed"]:
        failed.append("monotonicity")
    for name in failed:
        _err(f"check failed: {name}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def _read_log(path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [ln.split(",")[:-1] for ln in lines[1:] if ln]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def export_trajectory(src, out) -> None:
    header, data = _read_log(src)
    cols = [header.index(c) for c in ("t", "x0", "x1")]
    with open(out, "w", newline="") as fh:
        fh.write("t,x,y\n")
        for row in data[:, cols]:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def export_slice(grid, out) -> None:
    xs, ys, H = slice_2d(grid)
    with open(out, "w", newline="") as fh:
        fh.write("x,y,H\n")
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                fh.write("%.17g,%.17g,%.17g\n" % (x, y, H[i, j]))


def zero_contours(grid, level: float = 0.0) -> list[np.ndarray]:
    """Marching-squares contours of the middle slice over the first two axes."""
    from skimage import measure

    xs, ys, H = slice_2d(grid)
    out = []
    for c in measure.find_contours(H, level):
        px = np.interp(c[:, 0], np.arange(xs.size), xs)
        py = np.interp(c[:, 1], np.arange(ys.size), ys)
        out.append(np.column_stack([px, py]))
    return out


def export_levelset(grid, out) -> None:
    with open(out, "w", newline="") as fh:
        fh.write("contour,x,y\n")
        for k, c in enumerate(zero_contours(grid)):
            for x, y in c:
                fh.write("%d,%.17g,%.17g\n" % (k, x, y))


def cmd_export(args) -> int:
    try:
        if args.what == "trajectory":
            export_trajectory(args.input, args.out)
        else:
            grid = load(args.input)
            (export_slice if args.what == "slice" else export_levelset)(grid, args.out)
    except (OSError, ValueError, GridError) as exc:
        _err(str(exc))
        return EXIT_QUERY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="predcbf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a grid from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true", help="synthesize despite failed parameter checks")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="interpolate a grid at states")
    p.add_argument("--grid", required=True)
    p.add_argument("--state", required=True, help="'x0,x1,...' (';' separates states) or a CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="closed-loop simulation with the safety filter")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", action="append", default=[])
    p.add_argument("--force", action="store_true", help="simulate despite failed schedule checks")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="invariant suite on a grid (and a longer-horizon grid)")
    p.add_argument("--grid", required=True)
    p.add_argument("--grid2", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export", help="CSV data behind plots")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--what", required=True, choices=["trajectory", "slice", "levelset"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
