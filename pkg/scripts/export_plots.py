"""Write slice and zero-level-set CSVs for every grid in a directory."""

import argparse
from pathlib import Path

from predcbf.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grids", default=str(ROOT / "results" / "grids"))
    ap.add_argument("--out", default=str(ROOT / "results" / "plots"))
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for grid in sorted(Path(args.grids).glob("*.cbfg")):
        for what in ("slice", "levelset"):
            status = max(status, main(["export", "--in", str(grid), "--what", what,
                                       "--out", str(out / f"{grid.stem}_{what}.csv")]))
    return status


if __name__ == "__main__":
    raise SystemExit(run())
