"""Command-line entry point: ``lidartrack {synth,project,detect,track,evaluate,train}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import DETECTORS, ConfigError, PipelineConfig, load_config

class CLIError(RuntimeError):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "root", None):
        over["root"] = str(args.root)
    if getattr(args, "detector", None):
        over["detector"] = args.detector
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "checkpoint", None):
        over["checkpoint"] = args.checkpoint
    return dataclasses.replace(cfg, **over)


def _sequence(cfg: PipelineConfig, seq: str):
    from .kitti import KittiSequence

    return KittiSequence(Path(cfg.root), seq)


# -- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import StreetSpec, make_street_dataset

    spec = StreetSpec(n_frames=args.frames)
    speeds = args.ego_speed or [0.0] * len(args.seqs)
    if len(speeds) != len(args.seqs):
        raise CLIError("--ego-speed needs one value per sequence")
    make_street_dataset(args.out, [int(s) for s in args.seqs], args.seed or 0, spec, speeds)
    print(f"wrote {len(args.seqs)} sequence(s) of {args.frames} frames under {args.out}")
    return 0


def cmd_project(args) -> int:
    from .range_image import dump_debug, occupancy, project

    cfg = _config(args)
    ks = _sequence(cfg, args.seq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "occupancy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "n_points", "n_out_of_fov", "occupancy"])
        for f in ks.frames():
            scan = ks.scan(f)
            img = project(scan, cfg.projection)
            dump_debug(img, out / f"{f:06d}")
            w.writerow([f, len(scan), img.n_out_of_fov, f"{occupancy(img):.6f}"])
    print(f"projected sequence {ks.seq} into {out}")
    return 0


def cmd_detect(args) -> int:
    from .pipeline import detect_sequence, write_observations

    cfg = _config(args)
    ks = _sequence(cfg, args.seq)
    results = detect_sequence(ks, cfg, args.jobs)
    write_observations(args.out, {f: obs for f, obs, _ in results})
    print(f"{sum(len(o) for _, o, _ in results)} observations over {len(results)} frames -> {args.out}")
    return 0


def cmd_track(args) -> int:
    from .pipeline import track_sequence, write_tracks

    cfg = _config(args)
    if cfg.detector == "net" and not (cfg.checkpoint and Path(cfg.checkpoint).is_file()):
        raise CLIError(f"net detector needs an existing checkpoint (got {cfg.checkpoint!r})")
    ks = _sequence(cfg, args.seq)
    res = track_sequence(ks, cfg, args.jobs)
    write_tracks(args.out, res.rows)
    stats = res.latency()
    print(f"{len(res.rows)} track rows -> {args.out}")
    for k, v in stats.items():
        print(f"  {k:<16} {v:8.2f}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import Totals, read_tracks, summarize, write_metrics_csv
    from .pipeline import evaluate_sequence

    cfg = _config(args)
    if len(args.tracks) != len(args.seqs):
        raise CLIError("give one tracks CSV per sequence")
    tot = Totals()
    for path, seq in zip(args.tracks, args.seqs):
        ks = _sequence(cfg, seq)
        frames = ks.frames()
        tracks = read_tracks(path)
        extra = sorted(set(tracks) - set(frames))
        if extra:
            raise CLIError(f"{path}: frames {extra[:5]} are not in sequence {ks.seq}")
        tot = tot.add(evaluate_sequence(ks, tracks, cfg, frames))
    metrics = summarize(tot, cfg.evaluation)
    print(metrics.table(f"{cfg.detector} detector, {len(args.seqs)} sequence(s)"))
    if args.out:
        write_metrics_csv(args.out, {cfg.detector: metrics})
    return 0


def cmd_train(args) -> int:
    from .net import init_params, load_checkpoint, save_checkpoint
    from .net.train import TrainState, new_state, point_accuracy, train
    from .pipeline import training_set

    cfg = _config(args)
    if args.iterations is None:
        args.iterations = cfg.train.iterations
    seqs = [_sequence(cfg, s) for s in args.seqs]
    inputs, gts, images, classes = training_set(seqs, cfg, args.max_scans)
    if len(inputs) == 0:
        raise CLIError("no labelled scans found")
    seed = cfg.seed
    if args.resume:
        params, adam, meta = load_checkpoint(args.resume)
        if adam is None:
            raise CLIError(f"{args.resume} holds no optimizer state to resume from")
        state = TrainState(params, adam, int(meta.get("iteration", adam["t"])))
        budget = int(meta.get("budget", state.iteration + args.iterations))
    else:
        state = new_state(init_params(seed=seed))
        budget = args.budget or args.iterations
    log_path = Path(args.out).with_suffix(".loss.csv")
    train(state, inputs, gts, args.iterations, cfg.train, cfg.loss, seed, budget, log_path)
    acc = point_accuracy(state.params, images, classes)
    save_checkpoint(args.out, state.params, state.adam,
                    {"iteration": state.iteration, "budget": budget, "point_accuracy": acc})
    print(json.dumps({"iteration": state.iteration, "point_accuracy": round(acc, 6),
                      "checkpoint": str(args.out), "loss_log": str(log_path)}))
    return 0


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [pipeline] and per-module sections")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for frame-parallel stages")
    common.add_argument("--root", help="dataset root (overrides the config)")
    common.add_argument("--detector", choices=DETECTORS)
    common.add_argument("--checkpoint", help="network checkpoint for the net detector")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lidartrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic sequences in KITTI layout")
    s.add_argument("out")
    s.add_argument("--seqs", nargs="+", default=["0", "1"])
    s.add_argument("--frames", type=int, default=40)
    s.add_argument("--ego-speed", type=float, nargs="+")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("project", parents=[common], help="dump range images and occupancy")
    s.add_argument("seq")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("detect", parents=[common], help="write per-frame box observations")
    s.add_argument("seq")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("track", parents=[common], help="track one sequence to CSV")
    s.add_argument("seq")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("evaluate", parents=[common], help="score track CSVs against labels")
    s.add_argument("--tracks", nargs="+", required=True)
    s.add_argument("--seqs", nargs="+", required=True)
    s.add_argument("--out", help="metrics CSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train", parents=[common], help="train the segmentation network")
    s.add_argument("--seqs", nargs="+", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--budget", type=int, default=None, help="schedule length for the learning-rate decay")
    s.add_argument("--max-scans", type=int, default=None)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
