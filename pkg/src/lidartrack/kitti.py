"""KITTI tracking-benchmark ingest: scans, labels, calibration, ego poses."""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

RECORD_BYTES = 16
FRAME_PERIOD = 0.1
BACKGROUND, VEHICLE = 1, 2


class ObjectClass(str, enum.Enum):
    CAR = "Car"
    VAN = "Van"
    TRUCK = "Truck"
    OTHER = "Other"

    @classmethod
    def from_kitti(cls, name: str) -> "ObjectClass":
        try:
            return cls(name)
        except ValueError:
            return cls.OTHER

    @property
    def is_vehicle(self) -> bool:
        return self is not ObjectClass.OTHER


class ScanFormatError(ValueError):
    pass


class LabelFormatError(ValueError):
    pass


@dataclass
class RawScan:
    frame_index: int
    points: np.ndarray  # (N, 4) float32: x, y, z, reflectivity
    n_dropped: int = 0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass
class LabelBox3D:
    frame_index: int
    track_id: int
    cls: ObjectClass
    center: np.ndarray  # sensor frame, geometric centre of the cuboid
    dims: tuple[float, float, float]  # height, width, length
    yaw: float
    kitti_type: str = ""

    @property
    def height(self) -> float:
        return self.dims[0]

    @property
    def width(self) -> float:
        return self.dims[1]

    @property
    def length(self) -> float:
        return self.dims[2]


@dataclass
class Calibration:
    velo_to_cam: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))
    rect: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name, rot in (("velo_to_cam", self.velo_to_cam[:, :3]), ("rect", self.rect)):
            if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
                raise ValueError(f"{name} rotation block is not orthonormal")

    def velo_to_rect(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        cam = pts @ self.velo_to_cam[:, :3].T + self.velo_to_cam[:, 3]
        return cam @ self.rect.T

    def rect_to_velo(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        cam = pts @ self.rect  # rect is orthonormal
        return (cam - self.velo_to_cam[:, 3]) @ self.velo_to_cam[:, :3]

    def rect_dir_to_velo(self, dirs: np.ndarray) -> np.ndarray:
        return np.atleast_2d(dirs) @ self.rect @ self.velo_to_cam[:, :3]


@dataclass
class EgoPose:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    timestamp: float = 0.0

    @property
    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=float) + math.pi, 2 * math.pi) - math.pi
    out = np.where(out == -math.pi, math.pi, out)
    return float(out) if np.ndim(out) == 0 else out


# -- scans -----------------------------------------------------------------

def read_scan(path: str | Path, frame_index: int = 0) -> RawScan:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scan not found: {path}")
    raw = path.read_bytes()
    if len(raw) % RECORD_BYTES:
        offset = len(raw) - len(raw) % RECORD_BYTES
        raise ScanFormatError(f"{path}: truncated point record at byte offset {offset}")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float32)
    finite = np.isfinite(pts).all(axis=1)
    n_dropped = int((~finite).sum())
    if n_dropped:
        log.info("%s: dropped %d non-finite records", path, n_dropped)
        pts = pts[finite]
    return RawScan(frame_index, pts, n_dropped)


def write_scan(path: str | Path, points: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(points, dtype="<f4").tobytes())


# -- calibration -----------------------------------------------------------

_CALIB_KEYS = {
    "Tr_velo_cam": "velo_to_cam", "Tr_velo_to_cam": "velo_to_cam",
    "R_rect": "rect", "R0_rect": "rect",
}


def read_calibration(path: str | Path) -> Calibration:
    mats = {}
    for line in Path(path).read_text().splitlines():
        parts = line.replace(":", " ").split()
        if not parts or parts[0] not in _CALIB_KEYS:
            continue
        vals = np.array([float(v) for v in parts[1:]])
        name = _CALIB_KEYS[parts[0]]
        mats[name] = vals.reshape(3, 4) if name == "velo_to_cam" else vals.reshape(3, 3)
    return Calibration(**mats)


def write_calibration(path: str | Path, calib: Calibration) -> None:
    fmt = lambda m: " ".join(f"{v:.12e}" for v in np.ravel(m))
    Path(path).write_text(f"R_rect {fmt(calib.rect)}\nTr_velo_cam {fmt(calib.velo_to_cam)}\n")


# -- labels ----------------------------------------------------------------

def _parse_label_line(line: str, lineno: int, calib: Calibration) -> LabelBox3D:
    parts = line.split()
    if len(parts) not in (17, 18):
        raise LabelFormatError(f"line {lineno}: expected 17 fields, got {len(parts)}")
    try:
        frame, tid = int(parts[0]), int(parts[1])
        h, w, l = (float(v) for v in parts[10:13])
        loc = np.array([float(v) for v in parts[13:16]])
        ry = float(parts[16])
    except ValueError as exc:
        raise LabelFormatError(f"line {lineno}: {exc}") from None
    kitti_type = parts[2]
    # KITTI location is the bottom-face centre; camera y points down
    centre_rect = loc - np.array([0.0, h / 2, 0.0])
    centre = calib.rect_to_velo(centre_rect)[0]
    heading = calib.rect_dir_to_velo(np.array([math.cos(ry), 0.0, -math.sin(ry)]))[0]
    yaw = wrap_angle(math.atan2(heading[1], heading[0]))
    return LabelBox3D(frame, tid, ObjectClass.from_kitti(kitti_type), centre, (h, w, l), yaw, kitti_type)


def read_labels(path: str | Path, calib: Calibration | None = None) -> list[LabelBox3D]:
    calib = calib or Calibration()
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        box = _parse_label_line(line, lineno, calib)
        if box.kitti_type == "DontCare":
            continue
        if min(box.dims) <= 0:
            raise LabelFormatError(f"line {lineno}: non-positive box dimensions {box.dims}")
        boxes.append(box)
    return boxes


def format_label_line(box: LabelBox3D, calib: Calibration) -> str:
    h, w, l = box.dims
    bottom = calib.velo_to_rect(box.center)[0] + np.array([0.0, h / 2, 0.0])
    head = calib.velo_to_rect(np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0]))[0] \
        - calib.velo_to_rect(np.zeros(3))[0]
    ry = wrap_angle(math.atan2(-head[2], head[0]))
    kitti_type = box.kitti_type or box.cls.value
    return (f"{box.frame_index} {box.track_id} {kitti_type} 0 0 -10 "
            f"0 0 0 0 {h:.6f} {w:.6f} {l:.6f} "
            f"{bottom[0]:.6f} {bottom[1]:.6f} {bottom[2]:.6f} {ry:.6f}")


def group_by_frame(boxes: list[LabelBox3D]) -> dict[int, list[LabelBox3D]]:
    out: dict[int, list[LabelBox3D]] = {}
    for b in boxes:
        out.setdefault(b.frame_index, []).append(b)
    return out


def points_in_box(xyz: np.ndarray, box: LabelBox3D) -> np.ndarray:
    """Closed-interval inlier mask for one oriented cuboid."""
    d = np.asarray(xyz, dtype=float)[:, :3] - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    h, w, l = box.dims
    return (np.abs(u) <= l / 2) & (np.abs(v) <= w / 2) & (np.abs(d[:, 2]) <= h / 2)


def label_points(scan: RawScan | np.ndarray, boxes: list[LabelBox3D]) -> np.ndarray:
    xyz = scan.xyz if isinstance(scan, RawScan) else np.asarray(scan)[:, :3]
    classes = np.full(len(xyz), BACKGROUND, dtype=np.int8)
    for box in boxes:
        if box.cls.is_vehicle:
            classes[points_in_box(xyz, box)] = VEHICLE
    return classes


# -- time & odometry ------------------------------------------------------

def synth_timestamps(n_frames: int) -> np.ndarray:
    if n_frames < 0:
        raise ValueError("n_frames must be >= 0")
    return np.arange(n_frames) / 10.0


def read_poses(path: str | Path) -> dict[int, tuple[float, float, float]]:
    poses = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            poses[int(row["frame"])] = (float(row["x"]), float(row["y"]), float(row["theta"]))
    return poses


def write_poses(path: str | Path, poses: dict[int, tuple[float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "theta"])
        for frame in sorted(poses):
            w.writerow([frame, *(f"{v:.9f}" for v in poses[frame])])


# -- sequence layout -------------------------------------------------------

@dataclass
class KittiSequence:
    """``<root>/training/{velodyne/<seq>/*.bin, label_02/<seq>.txt, calib/<seq>.txt}``.

    An optional ego-pose CSV lives at ``<root>/training/poses/<seq>.csv``.
    """

    root: Path
    seq: str
    split: str = "training"

    def __post_init__(self):
        self.root = Path(self.root)
        self.seq = f"{int(self.seq):04d}" if str(self.seq).isdigit() else str(self.seq)

    @property
    def base(self) -> Path:
        return self.root / self.split

    @property
    def velodyne_dir(self) -> Path:
        return self.base / "velodyne" / self.seq

    @property
    def label_path(self) -> Path:
        return self.base / "label_02" / f"{self.seq}.txt"

    @property
    def calib_path(self) -> Path:
        return self.base / "calib" / f"{self.seq}.txt"

    @property
    def pose_path(self) -> Path:
        return self.base / "poses" / f"{self.seq}.csv"

    def frames(self) -> list[int]:
        if not self.velodyne_dir.is_dir():
            raise FileNotFoundError(f"no velodyne directory: {self.velodyne_dir}")
        frames = sorted(int(p.stem) for p in self.velodyne_dir.glob("*.bin"))
        if not frames:
            raise FileNotFoundError(f"no scans in {self.velodyne_dir}")
        return frames

    def scan(self, frame: int) -> RawScan:
        return read_scan(self.velodyne_dir / f"{frame:06d}.bin", frame)

    def calibration(self) -> Calibration:
        return read_calibration(self.calib_path) if self.calib_path.is_file() else Calibration()

    def labels(self) -> dict[int, list[LabelBox3D]]:
        if not self.label_path.is_file():
            raise FileNotFoundError(f"no labels: {self.label_path}")
        return group_by_frame(read_labels(self.label_path, self.calibration()))

    def ego_poses(self, frames: list[int]) -> dict[int, EgoPose]:
        stamps = synth_timestamps(max(frames) + 1 if frames else 0)
        table = read_poses(self.pose_path) if self.pose_path.is_file() else {}
        return {f: EgoPose(*table.get(f, (0.0, 0.0, 0.0)), timestamp=float(stamps[f])) for f in frames}
