"""Overfit the segmentation network on a handful of synthetic scans and report point accuracy."""
import argparse
import time

from lidartrack.net import init_params, save_checkpoint
from lidartrack.net.train import new_state, point_accuracy, train
from lidartrack.synth import StreetSpec, simulate_street, training_arrays


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scans", type=int, default=5)
    p.add_argument("--iterations", type=int, default=150)
    p.add_argument("--scene-seed", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--every", type=int, default=25, help="report accuracy every N iterations")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="loss CSV")
    args = p.parse_args()

    x, y, images, classes = training_arrays(simulate_street(args.scene_seed, StreetSpec(n_frames=args.scans)))
    state = new_state(init_params(seed=args.seed))
    t0 = time.perf_counter()
    while state.iteration < args.iterations:
        step = min(args.every, args.iterations - state.iteration)
        train(state, x, y, step, seed=args.seed, budget=args.iterations, log_path=args.log)
        acc = point_accuracy(state.params, images, classes)
        print(f"iter {state.iteration:5d}  loss {state.history[-1][-1]:.4f}  accuracy {acc:.4f}  "
              f"{time.perf_counter() - t0:6.0f} s")
    if args.out:
        save_checkpoint(args.out, state.params, state.adam, {"iteration": state.iteration, "point_accuracy": acc})


if __name__ == "__main__":
    main()
