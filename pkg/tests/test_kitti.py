import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidartrack.kitti import (BACKGROUND, VEHICLE, Calibration, KittiSequence, LabelBox3D,
                              LabelFormatError, ObjectClass, ScanFormatError, format_label_line,
                              label_points, points_in_box, read_calibration, read_labels,
                              read_poses, read_scan, synth_timestamps, write_calibration,
                              write_poses, write_scan)
from lidartrack.synth import KITTI_LIKE_CALIB


def pack(records):
    return b"".join(struct.pack("<4f", *r) for r in records)


def test_single_record(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(pack([(1.0, 2.0, 0.5, 0.3)]))
    scan = read_scan(p)
    assert len(scan) == 1
    np.testing.assert_array_equal(scan.points[0], np.float32([1.0, 2.0, 0.5, 0.3]))


def test_empty_file(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert len(read_scan(p)) == 0


def test_nan_record_dropped(tmp_path):
    recs = [(float(i), 1.0, 0.0, 0.5) for i in range(10)]
    recs[4] = (float("nan"), 1.0, 0.0, 0.5)
    p = tmp_path / "n.bin"
    p.write_bytes(pack(recs))
    scan = read_scan(p)
    assert len(scan) == 9 and scan.n_dropped == 1
    assert 4.0 not in scan.points[:, 0]


def test_truncated_reports_offset(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(pack([(1, 2, 3, 0.1)]) + b"\x00" * 6)
    with pytest.raises(ScanFormatError, match="16"):
        read_scan(p)


def test_missing_scan(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_scan(tmp_path / "nope.bin")


@given(st.lists(st.tuples(*[st.floats(-100, 100, width=32)] * 3, st.floats(0, 1, width=32)),
                max_size=50))
def test_scan_round_trip(tmp_path_factory, recs):
    p = tmp_path_factory.mktemp("rt") / "s.bin"
    pts = np.array(recs, dtype=np.float32).reshape(-1, 4)
    write_scan(p, pts)
    back = read_scan(p).points
    assert back.tobytes() == pts.tobytes()


def label_line(kind, loc=(1.0, 1.5, 10.0), dims=(1.5, 1.6, 4.0), ry=0.0, frame=0, tid=0):
    h, w, l = dims
    return f"{frame} {tid} {kind} 0 0 -10 0 0 10 10 {h} {w} {l} {loc[0]} {loc[1]} {loc[2]} {ry}"


@pytest.mark.parametrize("kind,cls", [("Car", ObjectClass.CAR), ("Van", ObjectClass.VAN),
                                      ("Truck", ObjectClass.TRUCK), ("Pedestrian", ObjectClass.OTHER),
                                      ("Tram", ObjectClass.OTHER)])
def test_label_classes(tmp_path, kind, cls):
    p = tmp_path / "l.txt"
    p.write_text(label_line(kind) + "\n")
    (box,) = read_labels(p)
    assert box.cls is cls
    assert box.cls.is_vehicle == (kind in ("Car", "Van", "Truck"))


def test_dontcare_skipped(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text(label_line("DontCare", tid=-1) + "\n" + label_line("Car") + "\n")
    assert [b.kitti_type for b in read_labels(p)] == ["Car"]


def test_malformed_line_number(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text(label_line("Car") + "\n0 1 Car 0 0\n")
    with pytest.raises(LabelFormatError, match="line 2"):
        read_labels(p)


def test_identity_calibration_transform(tmp_path):
    # identity extrinsics: the sensor frame is the rectified camera frame
    p = tmp_path / "l.txt"
    p.write_text(label_line("Car", loc=(2.0, 1.0, 12.0), dims=(1.5, 1.6, 4.0), ry=0.0) + "\n")
    (box,) = read_labels(p, Calibration())
    # bottom centre (2, 1, 12) lifted by h/2 against +y (down)
    np.testing.assert_allclose(box.center, [2.0, 0.25, 12.0], atol=1e-12)
    assert box.dims == (1.5, 1.6, 4.0)


def test_kitti_like_calibration_axes(tmp_path):
    # camera z forward -> velodyne x, camera x right -> velodyne -y, camera y down -> velodyne -z
    calib = Calibration(np.hstack([KITTI_LIKE_CALIB.velo_to_cam[:, :3], np.zeros((3, 1))]), np.eye(3))
    p = tmp_path / "l.txt"
    p.write_text(label_line("Car", loc=(3.0, 1.73, 20.0), dims=(1.5, 1.6, 4.0), ry=0.0) + "\n")
    (box,) = read_labels(p, calib)
    np.testing.assert_allclose(box.center, [20.0, -3.0, -1.73 + 0.75], atol=1e-9)
    # ry = 0 points along camera x, i.e. velodyne -y
    assert math.isclose(box.yaw, -math.pi / 2, abs_tol=1e-9)


def test_label_format_round_trip():
    calib = KITTI_LIKE_CALIB
    box = LabelBox3D(3, 7, ObjectClass.CAR, np.array([12.0, -4.0, -0.9]), (1.5, 1.7, 4.2), 0.7, "Car")
    line = format_label_line(box, calib)
    from lidartrack.kitti import _parse_label_line

    back = _parse_label_line(line, 1, calib)
    np.testing.assert_allclose(back.center, box.center, atol=1e-5)
    assert math.isclose(back.yaw, box.yaw, abs_tol=1e-5)
    assert (back.frame_index, back.track_id) == (3, 7)


def test_calibration_file_round_trip(tmp_path):
    write_calibration(tmp_path / "c.txt", KITTI_LIKE_CALIB)
    c = read_calibration(tmp_path / "c.txt")
    np.testing.assert_allclose(c.velo_to_cam, KITTI_LIKE_CALIB.velo_to_cam)


def test_calibration_rejects_non_rotation():
    with pytest.raises(ValueError):
        Calibration(np.hstack([2 * np.eye(3), np.zeros((3, 1))]), np.eye(3))


def test_timestamps():
    assert len(synth_timestamps(0)) == 0
    np.testing.assert_allclose(synth_timestamps(3), [0.0, 0.1, 0.2])
    assert math.isclose(synth_timestamps(11)[-1], 1.0)
    assert np.allclose(np.diff(synth_timestamps(50)), 0.1, rtol=0, atol=1e-12)


def car(center=(10.0, 0.0, 0.0), dims=(1.5, 2.0, 4.0), yaw=0.0, cls=ObjectClass.CAR):
    return LabelBox3D(0, 0, cls, np.asarray(center, float), dims, yaw)


def test_label_points_basic():
    box = car()
    pts = np.array([[10.0, 0.0, 0.0], [110.0, 0.0, 0.0], [12.0, 0.0, 0.0], [10.0, 1.0, 0.75]])
    np.testing.assert_array_equal(label_points(pts, [box]), [VEHICLE, BACKGROUND, VEHICLE, VEHICLE])


def test_non_vehicle_boxes_ignored():
    box = car(cls=ObjectClass.OTHER)
    assert label_points(np.array([[10.0, 0.0, 0.0]]), [box])[0] == BACKGROUND


def brute_inside(p, box):
    d = p - box.center
    R = np.array([[math.cos(box.yaw), -math.sin(box.yaw), 0], [math.sin(box.yaw), math.cos(box.yaw), 0],
                  [0, 0, 1]])
    local = R.T @ d
    h, w, l = box.dims
    return abs(local[0]) <= l / 2 and abs(local[1]) <= w / 2 and abs(local[2]) <= h / 2


def test_label_points_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        boxes = [car(rng.uniform(-10, 10, 3), tuple(rng.uniform(0.5, 5, 3)), rng.uniform(-math.pi, math.pi),
                     [ObjectClass.CAR, ObjectClass.TRUCK, ObjectClass.OTHER][rng.integers(3)])
                 for _ in range(rng.integers(1, 4))]
        pts = rng.uniform(-12, 12, (60, 3))
        want = [VEHICLE if any(x.cls.is_vehicle and brute_inside(p, x) for x in boxes) else BACKGROUND
                for p in pts]
        np.testing.assert_array_equal(label_points(pts, boxes), want)


def test_point_on_face_is_inside():
    # exactly representable faces, so the closed-interval decision is unambiguous
    box = car(yaw=0.0)
    faces = np.array([[12.0, 0.0, 0.0], [8.0, 0.0, 0.0], [10.0, -1.0, 0.0], [10.0, 0.0, -0.75],
                      [12.0, 1.0, 0.75]])
    assert points_in_box(faces, box).all()
    assert all(brute_inside(p, box) for p in faces)
    assert not points_in_box(np.array([[12.0 + 1e-9, 0.0, 0.0]]), box)[0]


def test_poses_round_trip(tmp_path):
    poses = {0: (0.0, 0.0, 0.0), 1: (1.5, -0.25, 0.1)}
    write_poses(tmp_path / "p.csv", poses)
    assert read_poses(tmp_path / "p.csv") == poses


def test_sequence_defaults_to_static_ego(tmp_path):
    ks = KittiSequence(tmp_path, "3")
    ks.velodyne_dir.mkdir(parents=True)
    for f in range(3):
        write_scan(ks.velodyne_dir / f"{f:06d}.bin", np.ones((2, 4), np.float32))
    assert ks.frames() == [0, 1, 2]
    ego = ks.ego_poses(ks.frames())
    assert all(tuple(e.pose) == (0.0, 0.0, 0.0) for e in ego.values())
    assert [e.timestamp for e in ego.values()] == pytest.approx([0.0, 0.1, 0.2])


def test_sequence_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        KittiSequence(tmp_path, "9").frames()
