"""Spherical projection of a sweep onto the 64 x 451 range/reflectivity grid."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ProjectionConfig
from .kitti import RawScan

EMPTY = -1


@dataclass
class RangeImage:
    range: np.ndarray  # (H, W) float64 metres, 0 where empty
    reflectivity: np.ndarray  # (H, W) float64
    index_map: np.ndarray  # (H, W) int64 index into the source scan, -1 where empty
    n_out_of_fov: int = 0

    @property
    def mask(self) -> np.ndarray:
        return self.index_map != EMPTY

    @property
    def shape(self) -> tuple[int, int]:
        return self.range.shape

    def stacked(self) -> np.ndarray:
        """Channel-first (2, H, W) float32 network input."""
        return np.stack([self.range, self.reflectivity]).astype(np.float32)


def elevation_edges(geom: ProjectionConfig) -> np.ndarray:
    """Descending row edges in degrees; row r spans (edges[r+1], edges[r]]."""
    steps = np.concatenate([np.full(geom.upper_rows, geom.upper_res_deg),
                            np.full(geom.lower_rows, geom.lower_res_deg)])
    return geom.top_elevation_deg - np.concatenate([[0.0], np.cumsum(steps)])


def row_centres(geom: ProjectionConfig) -> np.ndarray:
    e = elevation_edges(geom)
    return 0.5 * (e[:-1] + e[1:])


def col_centres(geom: ProjectionConfig) -> np.ndarray:
    return -geom.azimuth_fov_deg + np.arange(geom.width) * geom.azimuth_res_deg


def spherical(xyz: np.ndarray):
    """Azimuth and elevation in degrees, range in metres."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    rho = np.sqrt(x * x + y * y + z * z)
    phi = np.degrees(np.arctan2(y, x))
    elev = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return phi, elev, rho


def pixel_coords(xyz: np.ndarray, geom: ProjectionConfig):
    """Row and column per point; -1 for points outside the grid or with zero range."""
    phi, elev, rho = spherical(xyz)
    # columns are centred on -fov + k*res
    half = geom.azimuth_fov_deg / geom.azimuth_res_deg
    centre = round(half)
    if abs(half - centre) < 1e-9:
        # a column sits on phi = 0; rounding half away from it mirrors y -> -y exactly, ties included
        col = centre + np.sign(phi) * np.floor(np.abs(phi) / geom.azimuth_res_deg + 0.5)
    else:
        col = np.floor(half + phi / geom.azimuth_res_deg + 0.5)
    col = col.astype(np.int64)
    in_fov = (phi >= -geom.azimuth_fov_deg) & (phi <= geom.azimuth_fov_deg)
    col = np.clip(col, 0, geom.width - 1)

    edges = elevation_edges(geom)
    row = np.searchsorted(-edges, -elev, side="right") - 1
    # top edge inclusive; anything at or below the lowest edge lands on row == height
    in_band = (row >= 0) & (row < geom.height)

    ok = in_fov & in_band & (rho > 0)
    return np.where(ok, row, -1), np.where(ok, col, -1), rho


def project(scan: RawScan | np.ndarray, geom: ProjectionConfig | None = None) -> RangeImage:
    geom = geom or ProjectionConfig()
    pts = scan.points if isinstance(scan, RawScan) else np.asarray(scan)
    H, W = geom.height, geom.width
    rng = np.zeros((H, W))
    refl = np.zeros((H, W))
    index = np.full((H, W), EMPTY, dtype=np.int64)
    if len(pts) == 0:
        return RangeImage(rng, refl, index, 0)

    row, col, rho = pixel_coords(pts[:, :3], geom)
    valid = np.flatnonzero(row >= 0)
    n_out = len(pts) - len(valid)
    if len(valid):
        pix = row[valid] * W + col[valid]
        # nearest point wins; exact range ties go to the earlier record
        order = np.lexsort((valid, rho[valid], pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = valid[order[first]]
        flat = pix_sorted[first]
        index.flat[flat] = win
        rng.flat[flat] = rho[win]
        refl.flat[flat] = pts[win, 3]
    return RangeImage(rng, refl, index, n_out)


def rasterize_gt(image: RangeImage, point_classes: np.ndarray, n_points: int | None = None) -> np.ndarray:
    """Per-pixel class grid: 0 empty, otherwise the class of the winning point."""
    point_classes = np.asarray(point_classes)
    if n_points is not None and len(point_classes) != n_points:
        raise ValueError(f"class array has {len(point_classes)} entries for a {n_points}-point scan")
    mask = image.mask
    if mask.any() and image.index_map[mask].max() >= len(point_classes):
        raise ValueError("class array is shorter than the scan behind this image")
    gt = np.zeros(image.shape, dtype=np.int8)
    gt[mask] = point_classes[image.index_map[mask]]
    return gt


def unproject(image: RangeImage, scores: np.ndarray, points: np.ndarray | None = None):
    """Source indices (and points, if given) paired with their pixel score.

    Returns ``(indices, scores)`` or ``(indices, points, scores)``.
    """
    scores = np.asarray(scores)
    if scores.shape != image.shape:
        raise ValueError(f"score grid {scores.shape} does not match image {image.shape}")
    mask = image.mask
    idx = image.index_map[mask]
    s = scores[mask]
    if points is None:
        return idx, s
    return idx, np.asarray(points)[idx], s


def scores_to_points(image: RangeImage, scores: np.ndarray, n_points: int) -> np.ndarray:
    """Scatter pixel scores back to every scan point; points without a pixel score 0."""
    idx, s = unproject(image, scores)
    out = np.zeros(n_points)
    out[idx] = s
    return out


def hflip_scan(points: np.ndarray) -> np.ndarray:
    out = np.array(points, copy=True)
    out[:, 1] = -out[:, 1]
    return out


def write_pgm(path: str | Path, grid: np.ndarray, scale: float) -> None:
    """8-bit binary greymap of ``grid / scale`` clipped to [0, 1]."""
    img = np.clip(np.asarray(grid, dtype=float) / scale, 0.0, 1.0)
    data = np.round(img * 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def dump_debug(image: RangeImage, stem: str | Path, max_range: float = 80.0) -> tuple[Path, Path]:
    stem = Path(stem)
    rp = stem.with_name(stem.name + "_range.pgm")
    fp = stem.with_name(stem.name + "_reflectivity.pgm")
    write_pgm(rp, image.range, max_range)
    write_pgm(fp, image.reflectivity, 1.0)
    return rp, fp


def occupancy(image: RangeImage) -> float:
    return float(image.mask.mean())


def fov_contains(xy: np.ndarray, geom: ProjectionConfig | None = None) -> np.ndarray:
    geom = geom or ProjectionConfig()
    xy = np.atleast_2d(xy)
    phi = np.degrees(np.arctan2(xy[:, 1], xy[:, 0]))
    return np.abs(phi) <= geom.azimuth_fov_deg

