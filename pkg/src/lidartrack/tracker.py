"""Multi-hypothesis EKF vehicle tracker.

Each track follows the box corner nearest the sensor with a bank of EKFs
over the state (x, y, theta, v, rho): position in the world frame, heading,
speed along the heading and path curvature. One hypothesis moves along the
box's first axis, the other across it. Hypotheses are reweighted by their
measurement likelihood and pruned below a threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cluster_box import BoxObservation, rect_center, rect_corners, rot
from .config import TrackerConfig
from .kitti import EgoPose, wrap_angle

TRACK_HEADER = ["frame", "id", "x", "y", "theta", "v", "rho", "w", "l", "h", "weight_leader"]


# -- 2D pose algebra --------------------------------------------------------

def compose(a, b) -> np.ndarray:
    """a (+) b: pose ``b`` given in the frame of ``a``, expressed in ``a``'s parent frame."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.array([*(a[:2] + rot(a[2]) @ b[:2]), a[2] + b[2]])


def ominus(a, b) -> np.ndarray:
    """a (-) b: pose ``a`` expressed in the frame of pose ``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.array([*(rot(-b[2]) @ (a[:2] - b[:2])), a[2] - b[2]])


def wrap_period(a: float, period: float) -> float:
    """Wrap to (-period/2, period/2]."""
    w = math.fmod(a + period / 2, period)
    if w <= 0:
        w += period
    return w - period / 2


# -- filter primitives -----------------------------------------------------

@dataclass
class Hypothesis:
    x: np.ndarray
    P: np.ndarray
    weight: float
    axis_offset: float = 0.0  # heading minus the tracked box's first axis

    def copy(self) -> "Hypothesis":
        return Hypothesis(self.x.copy(), self.P.copy(), self.weight, self.axis_offset)

    @property
    def box_angle(self) -> float:
        return float(self.x[2] - self.axis_offset)


def motion(x: np.ndarray, dt: float) -> np.ndarray:
    px, py, th, v, rho = x
    return np.array([px + v * math.cos(th) * dt, py + v * math.sin(th) * dt, th + v * rho * dt, v, rho])


def motion_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    _, _, th, v, rho = x
    F = np.eye(5)
    F[0, 2] = -v * math.sin(th) * dt
    F[0, 3] = math.cos(th) * dt
    F[1, 2] = v * math.cos(th) * dt
    F[1, 3] = math.sin(th) * dt
    F[2, 3] = rho * dt
    F[2, 4] = v * dt
    return F


def process_noise(dt: float, cfg: TrackerConfig) -> np.ndarray:
    Q = np.zeros((5, 5))
    Q[3, 3] = cfg.process_sigmas[0] ** 2 * dt
    Q[4, 4] = cfg.process_sigmas[1] ** 2 * dt
    return Q


def predict(h: Hypothesis, dt: float, cfg: TrackerConfig | None = None) -> Hypothesis:
    cfg = cfg or TrackerConfig()
    if dt <= 0:
        raise ValueError("prediction step needs dt > 0")
    F = motion_jacobian(h.x, dt)
    P = F @ h.P @ F.T + process_noise(dt, cfg)
    return Hypothesis(motion(h.x, dt), 0.5 * (P + P.T), h.weight, h.axis_offset)


def measure(x: np.ndarray, ego=(0.0, 0.0, 0.0), mount=(0.0, 0.0, 0.0)):
    """Predicted sensor-frame corner pose ``(x - ego) - mount`` and its Jacobian."""
    y = ominus(ominus(x[:3], ego), mount)
    H = np.zeros((3, 5))
    H[:2, :2] = rot(-(ego[2] + mount[2]))
    H[2, 2] = 1.0
    return y, H


def measurement_noise(c: float, cfg: TrackerConfig) -> np.ndarray:
    sigma_theta = max(c, cfg.c_min) * cfg.orientation_scale
    return np.diag([cfg.position_sigmas[0] ** 2, cfg.position_sigmas[1] ** 2, sigma_theta ** 2])


def likelihood(z: np.ndarray, Z: np.ndarray) -> float:
    return math.exp(-0.5 * float(z @ np.linalg.solve(Z, z)))


def ekf_update(h: Hypothesis, y: np.ndarray, R: np.ndarray, ego, mount, angle_period: float):
    """Return the updated hypothesis (weight untouched) and its squared Mahalanobis innovation."""
    yhat, H = measure(h.x, ego, mount)
    z = np.asarray(y, float) - yhat
    z[2] = wrap_period(z[2], angle_period)
    Z = H @ h.P @ H.T + R
    Zinv = np.linalg.inv(Z)  # LinAlgError on a corrupted covariance
    K = h.P @ H.T @ Zinv
    x = h.x + K @ z
    x[2] = wrap_angle(x[2])
    IKH = np.eye(5) - K @ H
    P = IKH @ h.P @ IKH.T + K @ R @ K.T
    return Hypothesis(x, 0.5 * (P + P.T), h.weight, h.axis_offset), float(z @ Zinv @ z)


# -- tracks ----------------------------------------------------------------

@dataclass
class Track:
    id: int
    hypotheses: list[Hypothesis]
    corner_index: tuple[int, int]
    dims: np.ndarray  # width, length (relative to the box's first axis), height
    last_time: float = 0.0
    age: int = 0
    hits: int = 1
    misses: int = 0
    alive: bool = True

    @property
    def leader(self) -> Hypothesis:
        return max(self.hypotheses, key=lambda h: h.weight)

    def weights(self) -> np.ndarray:
        return np.array([h.weight for h in self.hypotheses])

    def corners(self, h: Hypothesis | None = None) -> np.ndarray:
        h = h or self.leader
        w, l, _ = self.dims
        return rect_corners(h.x[:2], self.corner_index, h.box_angle, l, w)

    def position_moments(self):
        w = self.weights()
        ps = np.array([h.x[:2] for h in self.hypotheses])
        mean = w @ ps
        cov = sum(wi * (h.P[:2, :2] + np.outer(p - mean, p - mean))
                  for wi, h, p in zip(w, self.hypotheses, ps))
        return mean, cov

    def box(self):
        """World-frame centre, heading, and extents along/across the heading."""
        h = self.leader
        w, l, hgt = self.dims
        centre = rect_center(h.x[:2], self.corner_index, h.box_angle, l, w)
        along, across = (l, w) if abs(wrap_period(h.axis_offset, math.pi)) < 1e-9 else (w, l)
        return centre, float(h.x[2]), float(along), float(across), float(hgt)


def obs_world_pose(obs: BoxObservation, ego, mount) -> np.ndarray:
    return compose(ego, compose(mount, (obs.x, obs.y, obs.theta)))


def initial_extents(width: float, length: float, prior=(1.8, 4.4), min_face: float = 0.5):
    """Box extents for a new track; a lone visible face borrows the unseen depth from the prior.

    A face longer than the prior's mean extent is taken as a flank, otherwise
    as the front or rear.
    """
    pw, pl = prior
    if min(width, length) >= min_face:
        return float(width), float(length)
    face = max(width, length)
    depth = pw if face > (pw + pl) / 2 else pl
    if width >= length:
        return float(width), float(depth)
    return float(depth), float(length)


def init_track(obs: BoxObservation, ego=(0.0, 0.0, 0.0), cfg: TrackerConfig | None = None,
               mount=(0.0, 0.0, 0.0), track_id: int = 0, timestamp: float = 0.0) -> Track:
    cfg = cfg or TrackerConfig()
    pose = obs_world_pose(obs, ego, mount)
    P0 = np.diag(np.square(cfg.init_sigmas))
    n = cfg.max_hypotheses
    hyps = []
    for i in range(n):
        off = i * math.pi / 2
        hyps.append(Hypothesis(np.array([pose[0], pose[1], wrap_angle(pose[2] + off), 0.0, 0.0]),
                               P0.copy(), 1.0 / n, off))
    dims = np.array([*initial_extents(obs.width, obs.length, cfg.prior_dims), obs.height])
    return Track(track_id, hyps, tuple(obs.corner_index), dims, last_time=timestamp)


def predict_track(track: Track, dt: float, cfg: TrackerConfig | None = None) -> Track:
    track.hypotheses = [predict(h, dt, cfg) for h in track.hypotheses]
    return track


def normalize_weights(track: Track, log_lik=None) -> None:
    logw = np.log(np.maximum(track.weights(), 1e-300))
    if log_lik is not None:
        logw = logw + np.asarray(log_lik)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    for h, wi in zip(track.hypotheses, w):
        h.weight = float(wi)


def update(track: Track, obs: BoxObservation, cfg: TrackerConfig | None = None,
           ego=(0.0, 0.0, 0.0), mount=(0.0, 0.0, 0.0)) -> Track:
    cfg = cfg or TrackerConfig()
    R = measurement_noise(obs.c, cfg)
    y = np.array([obs.x, obs.y, obs.theta])
    new, log_lik = [], []
    for h in track.hypotheses:
        h2, d2 = ekf_update(h, y, R, ego, mount, cfg.angle_period)
        new.append(h2)
        log_lik.append(-0.5 * d2)
    track.hypotheses = new
    normalize_weights(track, log_lik)
    return track


def prune(track: Track, tau: float = 0.001) -> Track:
    keep = [h for h in track.hypotheses if h.weight >= tau]
    if not keep:
        track.hypotheses = []
        track.alive = False
        return track
    track.hypotheses = keep
    normalize_weights(track)
    return track


def switch_corner(track: Track, corner_world: np.ndarray) -> Track:
    """Re-anchor every hypothesis on the predicted corner closest to ``corner_world``."""
    corners = track.corners()
    k = int(np.argmin(np.linalg.norm(corners - np.asarray(corner_world), axis=1)))
    new = (k // 2, k % 2)
    old = track.corner_index
    if new == old:
        return track
    w, l, _ = track.dims
    off = np.array([(new[0] - old[0]) * l, (new[1] - old[1]) * w])
    for h in track.hypotheses:
        h.x[:2] = h.x[:2] + rot(h.box_angle) @ off
    track.corner_index = new
    return track


def _gate_distance(track: Track, point: np.ndarray, R_pos: np.ndarray) -> float:
    mean, cov = track.position_moments()
    S_inv = np.linalg.inv(cov + R_pos)
    leader = track.leader
    shift = track.corners(leader) - leader.x[:2]
    best = math.inf
    for s in shift:
        d = point - (mean + s)
        best = min(best, float(d @ S_inv @ d))
    return best


def associate(tracks: list[Track], corners_world: list[np.ndarray], cfg: TrackerConfig | None = None):
    """Greedy nearest-neighbour matching under a position Mahalanobis gate.

    Distances are taken to the nearest of each track's four predicted corners,
    so an observation anchored on a different corner still associates.
    Returns ``(pairs, unmatched_track_idx, unmatched_obs_idx)``.
    """
    cfg = cfg or TrackerConfig()
    R_pos = np.diag(np.square(cfg.position_sigmas))
    cand = []
    for ti, t in enumerate(tracks):
        for oi, c in enumerate(corners_world):
            d2 = _gate_distance(t, np.asarray(c, float), R_pos)
            if d2 <= cfg.gate:
                cand.append((d2, ti, oi))
    cand.sort()
    used_t, used_o, pairs = set(), set(), []
    for d2, ti, oi in cand:
        if ti in used_t or oi in used_o:
            continue
        used_t.add(ti)
        used_o.add(oi)
        pairs.append((ti, oi))
    return (pairs, [i for i in range(len(tracks)) if i not in used_t],
            [i for i in range(len(corners_world)) if i not in used_o])


def _update_dims(track: Track, obs: BoxObservation, pose_world: np.ndarray, alpha: float) -> None:
    quarter = round((pose_world[2] - track.leader.box_angle) / (math.pi / 2))
    w, l = (obs.length, obs.width) if quarter % 2 else (obs.width, obs.length)
    if obs.corner_identified:
        track.dims[:2] = (1 - alpha) * track.dims[:2] + alpha * np.array([w, l])
    track.dims[2] = (1 - alpha) * track.dims[2] + alpha * obs.height


@dataclass
class Tracker:
    """Track lifecycle over one sequence, strictly in frame order."""

    cfg: TrackerConfig = field(default_factory=TrackerConfig)
    mount: tuple = (0.0, 0.0, 0.0)
    require_corner: bool = False
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 0

    def step(self, frame: int, observations: list[BoxObservation], ego: EgoPose) -> list[list]:
        cfg, t = self.cfg, ego.timestamp
        ego_pose = ego.pose
        for tr in self.tracks:
            dt = t - tr.last_time
            if dt > 0:
                predict_track(tr, dt, cfg)
                tr.last_time = t
            tr.age += 1

        poses = [obs_world_pose(o, ego_pose, self.mount) for o in observations]
        pairs, lost, fresh = associate(self.tracks, [p[:2] for p in poses], cfg)
        for ti, oi in pairs:
            tr, obs = self.tracks[ti], observations[oi]
            switch_corner(tr, poses[oi][:2])
            try:
                update(tr, obs, cfg, ego_pose, self.mount)
            except np.linalg.LinAlgError:
                tr.alive = False
                continue
            prune(tr, cfg.prune_threshold)
            if tr.alive:
                _update_dims(tr, obs, poses[oi], cfg.dims_alpha)
            tr.hits += 1
            tr.misses = 0
        for ti in lost:
            tr = self.tracks[ti]
            tr.misses += 1
            if tr.misses >= cfg.max_misses:
                tr.alive = False
        for oi in fresh:
            obs = observations[oi]
            if self.require_corner and not obs.corner_identified:
                continue
            self.tracks.append(init_track(obs, ego_pose, cfg, self.mount, self.next_id, t))
            self.next_id += 1
        self.tracks = [tr for tr in self.tracks if tr.alive]
        return [track_row(frame, tr) for tr in self.tracks
                if tr.misses == 0 and tr.hits >= cfg.min_hits]


def track_row(frame: int, tr: Track) -> list:
    centre, heading, along, across, hgt = tr.box()
    h = tr.leader
    return [frame, tr.id, float(centre[0]), float(centre[1]), heading, float(h.x[3]), float(h.x[4]),
            across, along, hgt, h.weight]


def format_track_row(row: list) -> list[str]:
    return [str(row[0]), str(row[1]), *(f"{v:.6f}" for v in row[2:])]
