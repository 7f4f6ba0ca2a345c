"""Order and K ablations at desk scale; writes CSVs under results/.

    python scripts/run_ablations.py [--axis order|K|both] [--out results]

About 2 minutes per training run on one CPU core (9 order runs, 6 K runs).
"""

import argparse
import time
from pathlib import Path

from freqscan.ablation import DESK_ABLATION, ablation_csv, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=["order", "K", "both"], default="both")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    for axis in (["order", "K"] if args.axis == "both" else [args.axis]):
        t = time.perf_counter()
        rows = run_ablation(DESK_ABLATION, axis, seeds, log=lambda m: print(m, flush=True))
        text = ablation_csv(rows, axis)
        (args.out / f"ablation_{axis}.csv").write_text(text)
        print(text, end="")
        print(f"# {axis} axis: {(time.perf_counter() - t) / 60:.1f} min")


if __name__ == "__main__":
    main()
