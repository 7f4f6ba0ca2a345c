"""Reference run: micro_plain on synthetic_bands, K=4, 10 epochs.

    python scripts/train_reference.py [--out results/reference]
"""

import argparse
import json
import time
from pathlib import Path

from freqscan.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/reference"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    t = time.perf_counter()
    result = train(TrainConfig(seed=args.seed), args.out, log=lambda row: print(json.dumps(row), flush=True))
    print(f"test accuracy {result.test_accuracy:.4f} in {(time.perf_counter() - t) / 60:.1f} min")


if __name__ == "__main__":
    main()
