"""Per-point vehicle scores from the three detection front-ends."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import GroundConfig, ProjectionConfig
from .kitti import VEHICLE, LabelBox3D, RawScan, label_points
from .range_image import project, scores_to_points


@dataclass
class PointScores:
    scores: np.ndarray
    detector: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)


def _xyz(scan) -> np.ndarray:
    return scan.xyz if isinstance(scan, RawScan) else np.asarray(scan)[:, :3]


def fit_plane(pts: np.ndarray):
    """Least-squares plane through ``pts``: unit normal (z >= 0) and offset d with n.p + d = 0."""
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1]
    if n[2] < 0:
        n = -n
    return n, -float(n @ centroid)


def remove_ground(scan, cfg: GroundConfig | None = None, seed: int = 0) -> np.ndarray:
    """Boolean ground mask from a consensus plane with a near-vertical normal.

    Returns an all-False mask when no admissible plane gathers at least
    ``min_inlier_fraction`` of the points.
    """
    cfg = cfg or GroundConfig()
    xyz = _xyz(scan).astype(np.float64)
    n_pts = len(xyz)
    mask = np.zeros(n_pts, dtype=bool)
    if n_pts < 3:
        return mask
    rng = np.random.default_rng(seed)
    cos_tilt = math.cos(math.radians(cfg.max_tilt_deg))
    best_count, best_plane = 0, None
    for _ in range(cfg.iterations):
        a, b, c = xyz[rng.choice(n_pts, 3, replace=False)]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-9:
            continue
        n /= norm
        if abs(n[2]) < cos_tilt:
            continue
        d = -n @ a
        count = int(np.count_nonzero(np.abs(xyz @ n + d) <= cfg.tolerance))
        if count > best_count:
            best_count, best_plane = count, (n, d)
    if best_plane is None or best_count < cfg.min_inlier_fraction * n_pts:
        return mask
    n, d = best_plane
    inliers = np.abs(xyz @ n + d) <= cfg.tolerance
    # one least-squares refinement on the consensus set
    n2, d2 = fit_plane(xyz[inliers])
    if abs(n2[2]) >= cos_tilt:
        refined = np.abs(xyz @ n2 + d2) <= cfg.tolerance
        if refined.sum() >= inliers.sum():
            inliers = refined
    return inliers


def geometric_scores(scan, cfg: GroundConfig | None = None, seed: int = 0) -> PointScores:
    ground = remove_ground(scan, cfg, seed)
    return PointScores((~ground).astype(float), "geometric")


def oracle_scores(scan, labels: list[LabelBox3D] | None) -> PointScores:
    if labels is None:
        raise KeyError("oracle detector needs labels for this frame")
    cls = label_points(_xyz(scan), labels)
    return PointScores((cls == VEHICLE).astype(float), "oracle")


def net_scores(scan: RawScan, params, geom: ProjectionConfig | None = None) -> PointScores:
    from .net import predict

    image = project(scan, geom)
    prob = predict(params, image)
    return PointScores(np.clip(scores_to_points(image, prob, len(scan)), 0.0, 1.0), "net")
