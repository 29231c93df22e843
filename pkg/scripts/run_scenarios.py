"""Closed-loop runs of the single-integrator scenarios, static and shrinking obstacle.

Synthesizes the grid when it is missing, simulates both configs and prints the
safety margins seen along each trajectory.
"""

import argparse
from pathlib import Path

import numpy as np

from predcbf.cli import main

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ("single_integrator", "single_integrator_tv")


def read_log(path: Path) -> dict:
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    rows = [r.split(",") for r in lines[2:]]
    cols = {}
    for i, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[i]) for r in rows])
        except ValueError:
            cols[name] = [r[i] for r in rows]
    return cols


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "results" / "scenarios"))
    ap.add_argument("--grid", default=str(ROOT / "results" / "grids" / "single_integrator.cbfg"))
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = Path(args.grid)
    if not grid.exists():
        grid.parent.mkdir(parents=True, exist_ok=True)
        code = main(["synth", "--config", str(ROOT / "configs" / "single_integrator.json"), "--out", str(grid)])
        if code:
            return code
    for name in SCENARIOS:
        log = out / f"{name}.csv"
        code = main(["simulate", "--config", str(ROOT / "configs" / f"{name}.json"),
                     "--grid", str(grid), "--out", str(log)])
        if code:
            return code
        c = read_log(log)
        h = c["h_min"] + c["lambda_min"]
        print(f"{name}: min H+lam {c['H_shifted_min'].min():.4f}  min h+lam {h.min():.4f}  "
              f"final x ({c['x0'][-1]:.2f}, {c['x1'][-1]:.2f})")
        main(["export", "--in", str(log), "--what", "trajectory", "--out", str(out / f"{name}_traj.csv")])
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
