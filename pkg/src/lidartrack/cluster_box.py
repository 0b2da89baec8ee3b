"""From classified points to tracker observations.

Points scoring above threshold are grouped by single-linkage euclidean
clustering. Each cluster's sensor-facing silhouette (one nearest point per
azimuth bin) is fitted with an oriented rectangle by sweeping candidate
orientations and comparing measured ranges against rays cast onto the
candidate box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .config import ClusterConfig

MIN_EXTENT = 0.1
MIN_SIDE_POINTS = 2
MIN_SIDE_SPAN = 0.3


@dataclass
class Cluster:
    indices: np.ndarray
    centroid: np.ndarray
    height: float
    vehicleness: float
    radius: float

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class PerimeterProfile:
    points: np.ndarray  # (M, 2) ground-plane xy, sorted by azimuth bin
    bins: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @property
    def ranges(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])


@dataclass
class BoxFit:
    theta: float  # orientation of the rectangle's first axis, in (-pi/4, pi/4]
    length: float  # extent along theta
    width: float  # extent across theta
    corner: np.ndarray  # rectangle corner nearest the sensor
    corner_index: tuple[int, int]  # (1 if corner is at the far end along theta, 1 if far across)
    mse: float
    corner_identified: bool

    def corners(self) -> np.ndarray:
        return rect_corners(self.corner, self.corner_index, self.theta, self.length, self.width)

    @property
    def center(self) -> np.ndarray:
        return rect_center(self.corner, self.corner_index, self.theta, self.length, self.width)


@dataclass
class BoxObservation:
    frame: int
    x: float
    y: float
    theta: float
    width: float
    length: float
    height: float
    vehicleness: float
    c: float
    corner_identified: bool
    corner_index: tuple[int, int] = (0, 0)
    n_points: int = 0

    @property
    def corner(self) -> np.ndarray:
        return np.array([self.x, self.y])


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rect_corners(anchor, index, theta, length, width) -> np.ndarray:
    """The four corners, ordered by (i, j) in {0,1}^2 with i along theta."""
    R = rot(theta)
    out = []
    for i in (0, 1):
        for j in (0, 1):
            off = np.array([(i - index[0]) * length, (j - index[1]) * width])
            out.append(np.asarray(anchor) + R @ off)
    return np.array(out)


def rect_center(anchor, index, theta, length, width) -> np.ndarray:
    off = np.array([(0.5 - index[0]) * length, (0.5 - index[1]) * width])
    return np.asarray(anchor) + rot(theta) @ off


# -- clustering ------------------------------------------------------------

def single_linkage(xyz: np.ndarray, max_dist: float) -> np.ndarray:
    """Connected-component labels of the graph linking points at distance <= max_dist."""
    n = len(xyz)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(xyz).query_pairs(max_dist, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def cluster(xyz: np.ndarray, scores: np.ndarray, cfg: ClusterConfig | None = None,
            min_points: int | None = None) -> list[Cluster]:
    cfg = cfg or ClusterConfig()
    min_points = cfg.min_points if min_points is None else min_points
    xyz = np.asarray(xyz, dtype=float)[:, :3]
    scores = np.asarray(scores, dtype=float)
    sel = np.flatnonzero(scores >= cfg.score_threshold)
    labels = single_linkage(xyz[sel], cfg.max_dist)
    out = []
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    for group in np.split(order, splits) if len(order) else []:
        if len(group) < min_points:
            continue
        idx = sel[np.sort(group)]
        pts = xyz[idx]
        centroid = pts.mean(axis=0)
        radius = float(np.hypot(*(pts[:, :2] - centroid[:2]).T).max())
        if radius < cfg.min_radius:
            continue
        out.append(Cluster(idx, centroid, float(np.ptp(pts[:, 2])),
                           float(scores[idx].mean()), radius))
    out.sort(key=lambda c: int(c.indices[0]))
    return out


# -- perimeter & box -------------------------------------------------------

def perimeter(xy: np.ndarray, bin_deg: float = 0.18) -> PerimeterProfile:
    """Nearest ground-projected point per azimuth bin."""
    xy = np.asarray(xy, dtype=float)[:, :2]
    az = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))
    bins = np.floor(az / bin_deg).astype(np.int64)
    r = np.hypot(xy[:, 0], xy[:, 1])
    # ties in range resolved by coordinates so the result ignores input order
    order = np.lexsort((xy[:, 1], xy[:, 0], r, bins))
    b = bins[order]
    first = np.ones(len(b), dtype=bool)
    first[1:] = b[1:] != b[:-1]
    keep = order[first]
    return PerimeterProfile(xy[keep], bins[keep])


def _candidate_angles(step_deg: float) -> np.ndarray:
    k = int(round(45.0 / step_deg))
    return np.radians(np.arange(-k + 1, k + 1) * step_deg)


def _ray_entry(u, v, bounds):
    """Distance along each ray (origin -> point) to where it enters the box, and the hit slab."""
    umin, umax, vmin, vmax = bounds
    r = np.hypot(u, v)
    du, dv = u / r, v / r
    with np.errstate(divide="ignore", invalid="ignore"):
        tu = np.where(du > 0, umin / du, np.where(du < 0, umax / du, -np.inf))
        tv = np.where(dv > 0, vmin / dv, np.where(dv < 0, vmax / dv, -np.inf))
    hit_u = tu >= tv
    return np.where(hit_u, tu, tv), hit_u, r


def _sweep(pts: np.ndarray, thetas: np.ndarray):
    c, s = np.cos(thetas)[:, None], np.sin(thetas)[:, None]
    u = c * pts[:, 0] + s * pts[:, 1]
    v = -s * pts[:, 0] + c * pts[:, 1]
    bounds = (u.min(axis=1, keepdims=True), u.max(axis=1, keepdims=True),
              v.min(axis=1, keepdims=True), v.max(axis=1, keepdims=True))
    entry, hit_u, r = _ray_entry(u, v, bounds)
    inside = ((bounds[0] <= 0) & (bounds[1] >= 0) & (bounds[2] <= 0) & (bounds[3] >= 0))[:, 0]
    mse = ((r - entry) ** 2).mean(axis=1)
    mse[inside] = np.inf
    return mse, u, v, hit_u


def _pick(mse: np.ndarray, thetas: np.ndarray) -> int:
    best = np.min(mse)
    tol = 1e-12 * (1.0 + best) if np.isfinite(best) else 0.0
    near = np.flatnonzero(mse <= best + tol)
    # smaller |theta| first, positive before negative
    return int(near[np.lexsort((thetas[near] < 0, np.abs(thetas[near])))[0]])


def _build(pts, theta, mse, hit_u=None, u=None, v=None) -> BoxFit:
    c, s = math.cos(theta), math.sin(theta)
    if u is None:
        u = c * pts[:, 0] + s * pts[:, 1]
        v = -s * pts[:, 0] + c * pts[:, 1]
    umin, umax, vmin, vmax = u.min(), u.max(), v.min(), v.max()
    length, width = max(umax - umin, MIN_EXTENT), max(vmax - vmin, MIN_EXTENT)
    best, corner, index = np.inf, None, (0, 0)
    for i, cu in ((0, umin), (1, umin + length)):
        for j, cv in ((0, vmin), (1, vmin + width)):
            d = math.hypot(cu, cv)
            if d < best - 1e-12:
                best, corner, index = d, np.array([c * cu - s * cv, s * cu + c * cv]), (i, j)
    identified = False
    if hit_u is not None:
        on_u, on_v = hit_u, ~hit_u
        span_u = np.ptp(v[on_u]) if on_u.sum() >= MIN_SIDE_POINTS else 0.0
        span_v = np.ptp(u[on_v]) if on_v.sum() >= MIN_SIDE_POINTS else 0.0
        identified = bool(span_u >= MIN_SIDE_SPAN and span_v >= MIN_SIDE_SPAN)
    return BoxFit(float(theta), float(length), float(width), corner, index, float(mse), identified)


def fit_box(profile: PerimeterProfile | np.ndarray, step_deg: float = 1.0) -> BoxFit:
    """Oriented rectangle minimising the mean squared range residual of simulated rays.

    Candidate orientations cover (-45, 45] degrees in ``step_deg`` increments.
    The returned box is anchored at its corner nearest the sensor origin.
    """
    pts = profile.points if isinstance(profile, PerimeterProfile) else np.asarray(profile, float)[:, :2]
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    az = np.arctan2(pts[:, 1], pts[:, 0])
    if len(pts) < 2 or np.ptp(np.unwrap(az)) < 1e-9:
        return _build(pts, 0.0, 0.0)
    thetas = _candidate_angles(step_deg)
    mse, u, v, hit_u = _sweep(pts, thetas)
    if not np.isfinite(mse).any():
        return _build(pts, 0.0, 0.0)
    k = _pick(mse, thetas)
    return _build(pts, thetas[k], mse[k], hit_u[k], u[k], v[k])


def orientation_noise(fit_mse: float, width: float, length: float, gain: float = 100.0) -> float:
    """Orientation-noise factor: gain * mean squared range residual / (w + l)^2."""
    if width + length <= 0:
        raise ValueError("box has zero perimeter")
    return gain * fit_mse / (width + length) ** 2


def observe(frame: int, xyz: np.ndarray, scores: np.ndarray, clusters: list[Cluster],
            cfg: ClusterConfig | None = None, bin_deg: float = 0.18) -> list[BoxObservation]:
    cfg = cfg or ClusterConfig()
    obs = []
    for cl in clusters:
        profile = perimeter(xyz[cl.indices], bin_deg)
        fit = fit_box(profile, cfg.sweep_step_deg)
        c = orientation_noise(fit.mse, fit.width, fit.length, cfg.noise_gain)
        obs.append(BoxObservation(frame, float(fit.corner[0]), float(fit.corner[1]), fit.theta,
                                  fit.width, fit.length, cl.height, cl.vehicleness, c,
                                  fit.corner_identified, fit.corner_index, len(cl)))
    return obs


OBS_HEADER = ["frame", "x", "y", "theta", "w", "l", "h", "vehicleness", "c", "corner_flag"]


def obs_row(o: BoxObservation) -> list[str]:
    return [str(o.frame), *(f"{v:.6f}" for v in (o.x, o.y, o.theta, o.width, o.length, o.height,
                                                 o.vehicleness, o.c)), str(int(o.corner_identified))]
