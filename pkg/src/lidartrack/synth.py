"""Seeded synthetic scenes: ray-cast street sequences in KITTI layout, plus
small geometric generators (planes, rectangles, blobs) used by the test oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ProjectionConfig
from .kitti import (Calibration, KittiSequence, LabelBox3D, ObjectClass, format_label_line,
                    label_points, write_calibration, write_poses, write_scan)
from .range_image import row_centres

SENSOR_HEIGHT = 1.73
VEHICLE_DIMS = {"Car": (1.5, 1.75, 4.2), "Van": (2.1, 1.95, 5.0), "Truck": (3.2, 2.5, 8.5)}

# KITTI-like extrinsics: camera x = -velo y, camera y = -velo z, camera z = velo x
KITTI_LIKE_CALIB = Calibration(
    velo_to_cam=np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, -0.08], [1.0, 0.0, 0.0, -0.27]]),
    rect=np.eye(3),
)


@dataclass
class SceneObject:
    kind: str  # Car, Van, Truck, Pedestrian or a clutter tag
    x: float
    y: float
    yaw: float
    dims: tuple[float, float, float]  # height, width, length
    speed: float = 0.0
    curvature: float = 0.0
    reflectivity: float = 0.5
    track_id: int = -1

    def step(self, dt: float) -> "SceneObject":
        x = self.x + self.speed * math.cos(self.yaw) * dt
        y = self.y + self.speed * math.sin(self.yaw) * dt
        return replace(self, x=x, y=y, yaw=self.yaw + self.speed * self.curvature * dt)

    @property
    def labelled(self) -> bool:
        return self.track_id >= 0


# -- ray casting -----------------------------------------------------------

def ray_directions(geom: ProjectionConfig | None = None, az_limit_deg: float = 45.0,
                   rng: np.random.Generator | None = None, jitter: float = 0.0) -> np.ndarray:
    geom = geom or ProjectionConfig()
    elev = row_centres(geom)
    az = np.arange(-az_limit_deg, az_limit_deg + 1e-9, geom.azimuth_res_deg)
    E, A = np.meshgrid(elev, az, indexing="ij")
    if rng is not None and jitter > 0:
        E = E + rng.uniform(-jitter, jitter, E.shape) * geom.lower_res_deg
        A = A + rng.uniform(-jitter, jitter, A.shape) * geom.azimuth_res_deg
    e, a = np.radians(E.ravel()), np.radians(A.ravel())
    return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)


def raycast(dirs: np.ndarray, boxes: list[SceneObject], ground_z: float = -SENSOR_HEIGHT,
            max_range: float = 80.0, rng: np.random.Generator | None = None,
            range_noise: float = 0.0):
    """Hit points (N, 4) and the index of the box each ray hit (-1 for ground)."""
    t_best = np.full(len(dirs), np.inf)
    owner = np.full(len(dirs), -2, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(dirs[:, 2] < 0, ground_z / dirs[:, 2], np.inf)
    t_best = np.minimum(t_best, tg)
    owner[np.isfinite(tg)] = -1
    for k, b in enumerate(boxes):
        h, w, l = b.dims
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        centre = np.array([b.x, b.y, ground_z + h / 2])
        o = np.array([-c * centre[0] - s * centre[1], s * centre[0] - c * centre[1], -centre[2]])
        d = np.stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]], 1)
        half = np.array([l / 2, w / 2, h / 2])
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        tnear = np.nanmax(np.minimum(t1, t2), axis=1)
        tfar = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tnear <= tfar) & (tnear > 0) & (tnear < t_best)
        t_best[hit] = tnear[hit]
        owner[hit] = k
    keep = np.flatnonzero(t_best <= max_range)
    t = t_best[keep]
    if rng is not None and range_noise > 0:
        t = t + rng.normal(0.0, range_noise, len(t))
    xyz = dirs[keep] * t[:, None]
    refl = np.array([0.15] + [b.reflectivity for b in boxes])[owner[keep] + 1]
    if rng is not None:
        refl = refl + rng.normal(0.0, 0.03, len(refl))
    pts = np.hstack([xyz, np.clip(refl, 0.0, 1.0)[:, None]]).astype(np.float32)
    return pts, owner[keep]


# -- street sequences ------------------------------------------------------

@dataclass
class StreetSpec:
    n_frames: int = 40
    ego_speed: float = 0.0
    n_moving: int = 7
    n_parked: int = 6
    n_clutter: int = 22
    n_pedestrians: int = 3
    max_range: float = 80.0
    range_noise: float = 0.01
    jitter: float = 0.15
    label_fov_deg: float = 45.0


def _vehicle(kind, x, y, yaw, rng, **kw) -> SceneObject:
    h, w, l = VEHICLE_DIMS[kind]
    s = rng.uniform(0.93, 1.07)
    return SceneObject(str(kind), x, y, yaw, (h * s, w * s, l * s), reflectivity=rng.uniform(0.35, 0.7), **kw)


def street_scene(rng: np.random.Generator, spec: StreetSpec) -> list[SceneObject]:
    objs: list[SceneObject] = []
    tid = 0
    for _ in range(spec.n_moving):
        kind = rng.choice(["Car", "Car", "Car", "Van", "Truck"], p=[0.3, 0.3, 0.2, 0.12, 0.08])
        lane = rng.choice([-3.5, 0.0, 3.5])
        oncoming = lane > 0 and rng.random() < 0.6
        x = rng.uniform(8.0, 60.0)
        yaw = math.pi if oncoming else 0.0
        obj = _vehicle(kind, x, lane + rng.normal(0, 0.2), yaw + rng.normal(0, 0.03), rng,
                       speed=rng.uniform(4.0, 11.0), curvature=rng.normal(0, 0.004), track_id=tid)
        if any(abs(o.y - obj.y) < 2.5 and abs(o.x - obj.x) < 10 for o in objs):
            continue
        objs.append(obj)
        tid += 1
    for _ in range(spec.n_parked):
        side = rng.choice([-1.0, 1.0])
        x = rng.uniform(6.0, 55.0)
        if any(abs(o.y - 7.3 * side) < 2.5 and abs(o.x - x) < 6 for o in objs):
            continue
        objs.append(_vehicle(rng.choice(["Car", "Van"], p=[0.8, 0.2]), x, 7.3 * side,
                             rng.normal(0, 0.05) + (math.pi if rng.random() < 0.5 else 0), rng,
                             track_id=tid))
        tid += 1
    # clutter: building facades, hedges, poles, kiosks
    for side in (-1.0, 1.0):
        x = -5.0
        while x < 80.0:
            length = rng.uniform(8.0, 25.0)
            objs.append(SceneObject("wall", x + length / 2, side * rng.uniform(12.5, 14.0), 0.0,
                                    (rng.uniform(5.0, 12.0), 1.0, length), reflectivity=0.3))
            x += length + rng.uniform(2.0, 8.0)
    for _ in range(spec.n_clutter):
        side = rng.choice([-1.0, 1.0])
        kind = rng.choice(["pole", "hedge", "kiosk"], p=[0.4, 0.4, 0.2])
        x = rng.uniform(4.0, 60.0)
        if kind == "pole":
            dims = (rng.uniform(3.0, 6.0), 0.3, 0.3)
        elif kind == "hedge":
            dims = (rng.uniform(0.8, 1.4), rng.uniform(0.8, 1.5), rng.uniform(2.0, 6.0))
        else:
            dims = (rng.uniform(2.0, 2.8), rng.uniform(1.5, 2.2), rng.uniform(2.5, 4.0))
        objs.append(SceneObject(kind, x, side * rng.uniform(9.5, 11.0), rng.normal(0, 0.1), dims,
                                reflectivity=rng.uniform(0.2, 0.6)))
    for _ in range(spec.n_pedestrians):
        side = rng.choice([-1.0, 1.0])
        objs.append(SceneObject("Pedestrian", rng.uniform(5.0, 40.0), side * rng.uniform(9.0, 11.0),
                                rng.uniform(-math.pi, math.pi), (1.75, 0.6, 0.6),
                                speed=rng.uniform(0.5, 1.5), reflectivity=0.4, track_id=tid))
        tid += 1
    return objs


def to_sensor(obj: SceneObject, ego) -> SceneObject:
    ex, ey, eth = ego
    c, s = math.cos(eth), math.sin(eth)
    dx, dy = obj.x - ex, obj.y - ey
    return replace(obj, x=c * dx + s * dy, y=-s * dx + c * dy, yaw=obj.yaw - eth)


def label_for(obj: SceneObject, frame: int, margin: float = 0.05, lift: float = 0.15) -> LabelBox3D:
    """Annotation box slightly looser than the object, raised clear of the ground."""
    h, w, l = obj.dims
    yaw = math.atan2(math.sin(obj.yaw), math.cos(obj.yaw))
    hl = h + margin - lift
    centre = np.array([obj.x, obj.y, -SENSOR_HEIGHT + lift + hl / 2])
    return LabelBox3D(frame, obj.track_id, ObjectClass.from_kitti(obj.kind), centre,
                      (hl, w + 2 * margin, l + 2 * margin), yaw, obj.kind)


@dataclass
class SynthFrame:
    points: np.ndarray
    labels: list[LabelBox3D]
    ego: tuple[float, float, float]
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def simulate_street(seed: int, spec: StreetSpec | None = None,
                    geom: ProjectionConfig | None = None) -> list[SynthFrame]:
    spec = spec or StreetSpec()
    rng = np.random.default_rng(seed)
    objs = street_scene(rng, spec)
    frames = []
    for f in range(spec.n_frames):
        ego = (spec.ego_speed * 0.1 * f, 0.0, 0.0)
        local = [to_sensor(o, ego) for o in objs]
        dirs = ray_directions(geom, rng=rng, jitter=spec.jitter)
        pts, owners = raycast(dirs, local, max_range=spec.max_range, rng=rng, range_noise=spec.range_noise)
        labels = []
        for o in local:
            if o.labelled:
                az = math.degrees(math.atan2(o.y, o.x))
                if abs(az) <= spec.label_fov_deg and 0 < o.x and math.hypot(o.x, o.y) <= spec.max_range:
                    labels.append(label_for(o, f))
        frames.append(SynthFrame(pts, labels, ego, owners))
        objs = [o.step(0.1) for o in objs]
    return frames


def write_sequence(root: str | Path, seq: str | int, frames: list[SynthFrame],
                   calib: Calibration = KITTI_LIKE_CALIB) -> KittiSequence:
    ks = KittiSequence(Path(root), str(seq))
    ks.velodyne_dir.mkdir(parents=True, exist_ok=True)
    ks.label_path.parent.mkdir(parents=True, exist_ok=True)
    ks.calib_path.parent.mkdir(parents=True, exist_ok=True)
    ks.pose_path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for f, fr in enumerate(frames):
        write_scan(ks.velodyne_dir / f"{f:06d}.bin", fr.points)
        lines.extend(format_label_line(b, calib) for b in fr.labels)
    ks.label_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    write_calibration(ks.calib_path, calib)
    write_poses(ks.pose_path, {f: fr.ego for f, fr in enumerate(frames)})
    return ks


def make_street_dataset(root: str | Path, seqs=(0, 1), seed: int = 0, spec: StreetSpec | None = None,
                        ego_speeds=None) -> list[KittiSequence]:
    out = []
    for i, seq in enumerate(seqs):
        s = replace(spec or StreetSpec())
        if ego_speeds is not None:
            s.ego_speed = ego_speeds[i]
        out.append(write_sequence(root, seq, simulate_street(seed * 1000 + int(seq), s)))
    return out


# -- small oracle scenes ---------------------------------------------------

def plane_with_box(rng: np.random.Generator, n_ground: int = 2000, n_box: int = 300,
                   ground_z: float = -SENSOR_HEIGHT, extent: float = 30.0):
    """Flat ground plus a solid block of points above it; returns (xyz, is_ground)."""
    g = np.c_[rng.uniform(-extent, extent, (n_ground, 2)), np.full(n_ground, ground_z)]
    b = np.c_[rng.uniform(8, 12, n_box), rng.uniform(-1, 1, n_box), rng.uniform(0.0, 1.5, n_box)]
    return np.vstack([g, b]), np.r_[np.ones(n_ground, bool), np.zeros(n_box, bool)]


def random_sphere(rng: np.random.Generator, n: int = 2000, radius: float = 10.0) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def rectangle_outline(center, theta: float, length: float, width: float, spacing: float = 0.05):
    """Points densely sampled along all four sides of an oriented rectangle."""
    c, s = math.cos(theta), math.sin(theta)
    pts = []
    for (u0, v0), (u1, v1) in (((-1, -1), (1, -1)), ((1, -1), (1, 1)), ((1, 1), (-1, 1)), ((-1, 1), (-1, -1))):
        a = np.array([u0 * length / 2, v0 * width / 2])
        b = np.array([u1 * length / 2, v1 * width / 2])
        n = max(int(np.linalg.norm(b - a) / spacing), 2)
        t = np.linspace(0, 1, n, endpoint=False)[:, None]
        pts.append(a + t * (b - a))
    p = np.vstack(pts)
    return np.c_[c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]] + np.asarray(center)


def training_arrays(frames: list[SynthFrame], geom: ProjectionConfig | None = None):
    """Stacked network inputs, ground-truth grids, range images and per-point classes."""
    from .range_image import project, rasterize_gt

    xs, ys, images, classes = [], [], [], []
    for fr in frames:
        img = project(fr.points, geom)
        cls = label_points(fr.points, fr.labels)
        xs.append(img.stacked())
        ys.append(rasterize_gt(img, cls, len(fr.points)))
        images.append(img)
        classes.append(cls)
    return np.stack(xs), np.stack(ys), images, classes
