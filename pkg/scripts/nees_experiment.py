"""Monte-Carlo filter consistency: average NEES per step against the two-sided chi-square envelope."""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import nees_envelope, simulate_nees  # noqa: E402


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seeds", type=int, default=20)
    args = p.parse_args()

    lo, hi = nees_envelope(args.runs)
    print(f"95% envelope for {args.runs} runs: [{lo:.3f}, {hi:.3f}]")
    print("seed  mean ANEES  steps inside")
    for seed in range(args.seeds):
        a = simulate_nees(args.runs, args.steps, seed)
        print(f"{seed:4d}  {a.mean():10.3f}  {np.mean((a >= lo) & (a <= hi)):12.0%}")


if __name__ == "__main__":
    main()
