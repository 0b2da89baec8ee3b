"""Per-sequence orchestration: detect, cluster and fit, then track in frame order."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster_box import OBS_HEADER, BoxObservation, cluster, obs_row, observe
from .config import PipelineConfig
from .detectors import geometric_scores, net_scores, oracle_scores
from .kitti import KittiSequence
from .range_image import fov_contains
from .tracker import TRACK_HEADER, Tracker, format_track_row

log = logging.getLogger(__name__)


def frame_seed(seed: int, frame: int) -> int:
    """Per-frame seed, independent of how frames are spread over workers."""
    return int(np.random.SeedSequence([seed, frame]).generate_state(1)[0])


def load_detector_params(cfg: PipelineConfig):
    if cfg.detector != "net":
        return None
    if not cfg.checkpoint:
        raise FileNotFoundError("the net detector needs a checkpoint path")
    from .net.checkpoint import load_checkpoint

    params, _, _ = load_checkpoint(cfg.checkpoint)
    return params


def frame_scores(scan, cfg: PipelineConfig, labels=None, params=None) -> np.ndarray:
    if cfg.detector == "oracle":
        s = oracle_scores(scan, labels if labels is not None else []).scores
    elif cfg.detector == "geometric":
        s = geometric_scores(scan, cfg.ground, frame_seed(cfg.seed, scan.frame_index)).scores
    elif cfg.detector == "net":
        s = net_scores(scan, params, cfg.projection).scores
    else:
        raise ValueError(f"unknown detector {cfg.detector!r}")
    # every front-end sees the same horizontal field of view as the range image
    return np.where(fov_contains(scan.xyz[:, :2], cfg.projection), s, 0.0)


def detect_frame(args) -> tuple[int, list[BoxObservation], float]:
    ks, frame, cfg, labels, params = args
    t0 = time.perf_counter()
    scan = ks.scan(frame)
    scores = frame_scores(scan, cfg, labels, params)
    clusters = cluster(scan.xyz, scores, cfg.cluster, cfg.min_points())
    obs = observe(frame, scan.xyz, scores, clusters, cfg.cluster, cfg.projection.azimuth_res_deg)
    return frame, obs, time.perf_counter() - t0


@dataclass
class SequenceResult:
    rows: list[list] = field(default_factory=list)
    observations: dict[int, list[BoxObservation]] = field(default_factory=dict)
    detect_seconds: list[float] = field(default_factory=list)
    track_seconds: list[float] = field(default_factory=list)

    def latency(self) -> dict[str, float]:
        out = {}
        for name, xs in (("detect", self.detect_seconds), ("track", self.track_seconds)):
            a = np.asarray(xs) * 1e3
            if len(a):
                out.update({f"{name}_ms_mean": float(a.mean()), f"{name}_ms_p95": float(np.percentile(a, 95)),
                            f"{name}_ms_max": float(a.max())})
        return out


def detect_sequence(ks: KittiSequence, cfg: PipelineConfig, jobs: int = 1, frames=None):
    """Observations per frame, computed frame-parallel when ``jobs > 1``."""
    frames = ks.frames() if frames is None else list(frames)
    labels = ks.labels() if cfg.detector == "oracle" else {}
    params = load_detector_params(cfg)
    tasks = [(ks, f, cfg, labels.get(f, []) if cfg.detector == "oracle" else None, params) for f in frames]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(detect_frame, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [detect_frame(t) for t in tasks]
    return results


def track_sequence(ks: KittiSequence, cfg: PipelineConfig, jobs: int = 1, frames=None) -> SequenceResult:
    results = detect_sequence(ks, cfg, jobs, frames)
    frames = [f for f, _, _ in results]
    poses = ks.ego_poses(frames)
    # without per-point vehicleness the geometric front-end waits for a visible corner
    tracker = Tracker(cfg.tracker, tuple(cfg.sensor_mount), require_corner=cfg.detector == "geometric")
    res = SequenceResult()
    for f, obs, dt in results:
        t0 = time.perf_counter()
        res.rows.extend(tracker.step(f, obs, poses[f]))
        res.track_seconds.append(time.perf_counter() - t0)
        res.detect_seconds.append(dt)
        res.observations[f] = obs
    stats = res.latency()
    log.info("sequence %s: %d frames, %d track rows, %s", ks.seq, len(frames), len(res.rows),
             ", ".join(f"{k}={v:.1f}" for k, v in stats.items()))
    return res


def write_tracks(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for r in rows:
            w.writerow(format_track_row(r))


def write_observations(path: str | Path, observations: dict[int, list[BoxObservation]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for f in sorted(observations):
            for o in observations[f]:
                w.writerow(obs_row(o))


def sequence_ground_truth(ks: KittiSequence, cfg: PipelineConfig, frames=None):
    from .evaluation import gt_boxes

    frames = ks.frames() if frames is None else list(frames)
    labels, poses = ks.labels(), ks.ego_poses(frames)
    return {f: gt_boxes(labels.get(f, []), poses[f], cfg.evaluation, cfg.projection,
                        tuple(cfg.sensor_mount)) for f in frames}


def evaluate_sequence(ks: KittiSequence, tracks_by_frame, cfg: PipelineConfig, frames=None):
    """Totals for one sequence; ``tracks_by_frame`` as returned by ``read_tracks``."""
    from .evaluation import evaluate_frames

    frames = ks.frames() if frames is None else list(frames)
    gt = sequence_ground_truth(ks, cfg, frames)
    return evaluate_frames(gt, tracks_by_frame, frames, cfg.evaluation, ks.seq)


def rows_to_boxes(rows: list[list]):
    from .evaluation import BEVBox

    out: dict[int, list] = {}
    for r in rows:
        out.setdefault(int(r[0]), []).append(BEVBox(int(r[1]), np.array([r[2], r[3]]), r[4], r[8], r[7]))
    return out


def training_set(seqs: list[KittiSequence], cfg: PipelineConfig, max_scans: int | None = None):
    """Network inputs and rasterised labels for every labelled scan, in sequence order."""
    from .kitti import label_points
    from .range_image import project, rasterize_gt

    xs, ys, images, classes = [], [], [], []
    for ks in seqs:
        labels = ks.labels()
        for f in ks.frames():
            if max_scans is not None and len(xs) >= max_scans:
                break
            scan = ks.scan(f)
            img = project(scan, cfg.projection)
            cls = label_points(scan, labels.get(f, []))
            xs.append(img.stacked())
            ys.append(rasterize_gt(img, cls, len(scan)))
            images.append(img)
            classes.append(cls)
    h, w = cfg.projection.height, cfg.projection.width
    if not xs:
        return np.zeros((0, 2, h, w), np.float32), np.zeros((0, h, w), np.int64), [], []
    return np.stack(xs), np.stack(ys), images, classes
