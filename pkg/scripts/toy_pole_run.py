"""Paired toy pole runs with and without hard-negative mining.

    python scripts/toy_pole_run.py --seeds 0 1 2 --out toy.json
"""

import argparse
import json

from pgrid.experiment import ToyRunConfig, hard_negative_gain


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=ToyRunConfig.epochs)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()
    runs = hard_negative_gain(ToyRunConfig(epochs=args.epochs), seeds=tuple(args.seeds), jobs=args.jobs)
    for r in runs:
        print(f"seed {r['seed']}: F1_A plain {r['F1_A_plain']:.3f}  mined {r['F1_A_mined']:.3f}  "
              f"gain {r['gain']:+.3f}  ({r['seconds']:.0f}s)")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(runs, f, indent=2)


if __name__ == "__main__":
    main()
