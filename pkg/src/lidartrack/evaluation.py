"""Point-wise detection scores and CLEAR-MOT / MT-PT-ML tracking metrics in bird's-eye view."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from .config import EvalConfig, ProjectionConfig
from .kitti import EgoPose, LabelBox3D, ObjectClass
from .range_image import fov_contains
from .tracker import compose


@dataclass
class BEVBox:
    id: int
    center: np.ndarray
    heading: float
    length: float  # along heading
    width: float
    ignored: bool = False

    def polygon(self) -> Polygon:
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2, self.width / 2
        pts = [(self.center[0] + c * u - s * v, self.center[1] + s * u + c * v)
               for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]
        return Polygon(pts)


def bev_iou(a: BEVBox, b: BEVBox) -> float:
    pa, pb = a.polygon(), b.polygon()
    inter = pa.intersection(pb).area
    if inter <= 0:
        return 0.0
    return float(inter / (pa.area + pb.area - inter))


@dataclass
class FrameMatchResult:
    matches: list[tuple[int, int]] = field(default_factory=list)  # (gt id, track id)
    false_positives: list[int] = field(default_factory=list)
    false_negatives: list[int] = field(default_factory=list)
    id_switches: list[int] = field(default_factory=list)


def match_frame(gts: list[BEVBox], tracks: list[BEVBox], previous: dict[int, int] | None = None,
                iou_threshold: float = 0.5) -> FrameMatchResult:
    """Greedy BEV-IoU matching with continuation preference.

    ``previous`` maps a gt id to the track id it was last matched with; that
    pair is kept first whenever it still clears the threshold. Remaining pairs
    are taken by descending IoU. Tracks overlapping only ignored ground truth
    count neither as matches nor as false positives.
    """
    previous = previous or {}
    active = [g for g in gts if not g.ignored]
    ignored = [g for g in gts if g.ignored]
    iou = np.array([[bev_iou(g, t) for t in tracks] for g in active]).reshape(len(active), len(tracks))
    track_pos = {t.id: j for j, t in enumerate(tracks)}

    cont = []
    for i, g in enumerate(active):
        j = track_pos.get(previous.get(g.id, -1))
        if j is not None and iou[i, j] >= iou_threshold:
            cont.append((-iou[i, j], i, j))
    rest = [(-iou[i, j], i, j) for i in range(len(active)) for j in range(len(tracks))
            if iou[i, j] >= iou_threshold]
    g_to_t: dict[int, int] = {}
    for _, i, j in sorted(cont) + sorted(rest):
        if i not in g_to_t and j not in g_to_t.values():
            g_to_t[i] = j

    res = FrameMatchResult()
    for i, j in sorted(g_to_t.items()):
        g, t = active[i], tracks[j]
        res.matches.append((g.id, t.id))
        if g.id in previous and previous[g.id] != t.id:
            res.id_switches.append(g.id)
    res.false_negatives = [g.id for i, g in enumerate(active) if i not in g_to_t]
    used = set(g_to_t.values())
    for j, t in enumerate(tracks):
        if j not in used and not any(bev_iou(g, t) >= iou_threshold for g in ignored):
            res.false_positives.append(t.id)
    return res


def classify_coverage(coverage: float, cfg: EvalConfig | None = None) -> str:
    cfg = cfg or EvalConfig()
    if coverage >= cfg.mostly_tracked:
        return "MT"
    if coverage < cfg.mostly_lost:
        return "ML"
    return "PT"


def mt_pt_ml(coverages, cfg: EvalConfig | None = None) -> tuple[float, float, float]:
    coverages = list(coverages)
    if not coverages:
        return 0.0, 0.0, 0.0
    kinds = [classify_coverage(c, cfg) for c in coverages]
    n = len(kinds)
    return kinds.count("MT") / n, kinds.count("PT") / n, kinds.count("ML") / n


def mota(fn: int, fp: int, ids: int, n_gt: int) -> float:
    """MOTA in percent; negative when errors outnumber ground-truth objects."""
    if n_gt <= 0:
        raise ValueError("MOTA is undefined without ground-truth objects")
    return 100.0 * (1.0 - (fn + fp + ids) / n_gt)


@dataclass
class Totals:
    n_gt: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    n_frames: int = 0
    coverage: dict = field(default_factory=dict)  # (seq, gt id) -> [matched, present]

    def add(self, other: "Totals") -> "Totals":
        out = Totals(self.n_gt + other.n_gt, self.tp + other.tp, self.fp + other.fp,
                     self.fn + other.fn, self.ids + other.ids, self.n_frames + other.n_frames)
        out.coverage = {**self.coverage, **other.coverage}
        return out


@dataclass
class TrackingMetrics:
    mt: float
    pt: float
    ml: float
    recall: float
    precision: float
    false_alarm_rate: float
    mota: float
    totals: Totals | None = None

    ROWS = (("Mostly Tracked (%)", "mt", 100), ("Partly Tracked (%)", "pt", 100),
            ("Mostly Lost (%)", "ml", 100), ("Recall (%)", "recall", 100),
            ("Precision (%)", "precision", 100), ("False Alarm Rate", "false_alarm_rate", 1),
            ("MOTA", "mota", 1))

    def table(self, title: str = "") -> str:
        lines = [title] if title else []
        for label, attr, scale in self.ROWS:
            lines.append(f"{label:<20} {getattr(self, attr) * scale:8.2f}")
        return "\n".join(lines)

    def as_dict(self) -> dict[str, float]:
        return {attr: getattr(self, attr) for _, attr, _ in self.ROWS}


def evaluate_frames(gt_by_frame: dict[int, list[BEVBox]], tracks_by_frame: dict[int, list[BEVBox]],
                    frames, cfg: EvalConfig | None = None, seq: str = "") -> Totals:
    cfg = cfg or EvalConfig()
    tot = Totals()
    previous: dict[int, int] = {}
    for f in frames:
        gts = gt_by_frame.get(f, [])
        trs = tracks_by_frame.get(f, [])
        res = match_frame(gts, trs, previous, cfg.iou_threshold)
        tot.n_frames += 1
        tot.n_gt += sum(not g.ignored for g in gts)
        tot.tp += len(res.matches)
        tot.fp += len(res.false_positives)
        tot.fn += len(res.false_negatives)
        tot.ids += len(res.id_switches)
        for g in gts:
            if not g.ignored:
                tot.coverage.setdefault((seq, g.id), [0, 0])[1] += 1
        for gid, tid in res.matches:
            tot.coverage[(seq, gid)][0] += 1
            previous[gid] = tid
    return tot


def summarize(tot: Totals, cfg: EvalConfig | None = None) -> TrackingMetrics:
    cov = [m / n for m, n in tot.coverage.values() if n > 0]
    mt, pt, ml = mt_pt_ml(cov, cfg)
    recall = tot.tp / tot.n_gt if tot.n_gt else 0.0
    precision = tot.tp / (tot.tp + tot.fp) if tot.tp + tot.fp else 0.0
    far = tot.fp / tot.n_frames if tot.n_frames else 0.0
    return TrackingMetrics(mt, pt, ml, recall, precision, far,
                           mota(tot.fn, tot.fp, tot.ids, tot.n_gt), tot)


# -- ground truth & track files -------------------------------------------

def gt_boxes(labels: list[LabelBox3D], ego: EgoPose, cfg: EvalConfig | None = None,
             geom: ProjectionConfig | None = None, mount=(0.0, 0.0, 0.0)) -> list[BEVBox]:
    """World-frame vehicle boxes for one frame; trucks (optionally) and out-of-FOV boxes are ignored."""
    cfg = cfg or EvalConfig()
    out = []
    for b in labels:
        if not b.cls.is_vehicle:
            continue
        pose = compose(ego.pose, compose(mount, (b.center[0], b.center[1], b.yaw)))
        ignored = (b.cls is ObjectClass.TRUCK and not cfg.include_trucks) \
            or not bool(fov_contains(b.center[:2], geom)[0])
        out.append(BEVBox(b.track_id, pose[:2], float(pose[2]), b.length, b.width, ignored))
    return out


def read_tracks(path: str | Path) -> dict[int, list[BEVBox]]:
    out: dict[int, list[BEVBox]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f = int(row["frame"])
            out.setdefault(f, []).append(BEVBox(
                int(row["id"]), np.array([float(row["x"]), float(row["y"])]), float(row["theta"]),
                float(row["l"]), float(row["w"])))
    return out


def write_metrics_csv(path: str | Path, rows: dict[str, TrackingMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "MT", "PT", "ML", "recall", "precision", "false_alarm_rate", "MOTA"])
        for name, m in rows.items():
            w.writerow([name, *(f"{v:.6f}" for v in m.as_dict().values())])


# -- point-wise detection quality -------------------------------------------

@dataclass
class PointwisePR:
    precision: float
    recall: float
    flagged_no_vehicle: list[int] = field(default_factory=list)
    flagged_no_positive: list[int] = field(default_factory=list)


def pointwise_pr(scores_per_scan, classes_per_scan, threshold: float = 0.5) -> PointwisePR:
    """Vehicle-class precision and recall per scan, averaged over scans.

    A scan without vehicle points scores recall 1, one without predicted
    positives scores precision 1; both cases are flagged by scan index.
    """
    precs, recs = [], []
    res = PointwisePR(0.0, 0.0)
    for k, (s, c) in enumerate(zip(scores_per_scan, classes_per_scan)):
        s, c = np.asarray(s), np.asarray(c)
        if s.shape != c.shape:
            raise ValueError(f"scan {k}: {s.shape} scores vs {c.shape} classes")
        pred, truth = s >= threshold, c == 2
        tp = int((pred & truth).sum())
        fp = int((pred & ~truth).sum())
        fn = int((~pred & truth).sum())
        if tp + fn == 0:
            res.flagged_no_vehicle.append(k)
            recs.append(1.0)
        else:
            recs.append(tp / (tp + fn))
        if tp + fp == 0:
            res.flagged_no_positive.append(k)
            precs.append(1.0)
        else:
            precs.append(tp / (tp + fp))
    if precs:
        res.precision, res.recall = float(np.mean(precs)), float(np.mean(recs))
    return res
