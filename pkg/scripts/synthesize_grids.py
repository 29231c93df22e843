"""Synthesize a grid for every config in configs/.

Full-size grids for the 3-D and 4-D models take hours on a single core;
``--scale`` shrinks every axis count (keeping at least 3 nodes) for quick runs.
"""

import argparse
import json
import tempfile
from pathlib import Path

from predcbf.cli import main

ROOT = Path(__file__).resolve().parents[1]


def scaled_config(path: Path, scale: float, out_dir: Path) -> Path:
    cfg = json.loads(path.read_text())
    if scale != 1.0:
        cfg["domain"]["counts"] = [max(3, round((n - 1) * scale) + 1) for n in cfg["domain"]["counts"]]
    dst = out_dir / path.name
    dst.write_text(json.dumps(cfg))
    return dst


def run() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "results" / "grids"))
    ap.add_argument("--only", nargs="*", default=None, help="config stems to run")
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    with tempfile.TemporaryDirectory() as tmp:
        for cfg in sorted((ROOT / "configs").glob("*.json")):
            if args.only and cfg.stem not in args.only:
                continue
            print(f"== {cfg.stem}", flush=True)
            argv = ["synth", "--config", str(scaled_config(cfg, args.scale, Path(tmp))),
                    "--out", str(out / f"{cfg.stem}.cbfg")]
            if args.threads:
                argv += ["--threads", str(args.threads)]
            status = max(status, main(argv))
    return status


if __name__ == "__main__":
    raise SystemExit(run())
