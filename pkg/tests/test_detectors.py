import math

import numpy as np
import pytest

from lidartrack.config import GroundConfig
from lidartrack.detectors import PointScores, fit_plane, geometric_scores, oracle_scores, remove_ground
from lidartrack.kitti import VEHICLE, LabelBox3D, ObjectClass, label_points
from lidartrack.synth import plane_with_box, random_sphere


def test_plane_and_box(rng):
    xyz, is_ground = plane_with_box(rng)
    mask = remove_ground(xyz, seed=0)
    np.testing.assert_array_equal(mask, is_ground)


def test_sphere_has_no_ground(rng):
    assert not remove_ground(random_sphere(rng), seed=0).any()


def test_single_plane_all_ground(rng):
    xyz = np.c_[rng.uniform(-20, 20, (500, 2)), np.full(500, -1.73)]
    assert remove_ground(xyz, seed=1).all()


def test_steep_plane_rejected(rng):
    # a wall (normal horizontal) is never ground
    xyz = np.c_[np.full(500, 5.0), rng.uniform(-20, 20, 500), rng.uniform(-2, 5, 500)]
    assert not remove_ground(xyz, seed=2).any()


def test_tilted_ground_within_limit(rng):
    xy = rng.uniform(-20, 20, (800, 2))
    z = -1.73 + math.tan(math.radians(8)) * xy[:, 0]
    assert remove_ground(np.c_[xy, z], seed=3).all()


def test_rotation_invariance(rng):
    xyz, _ = plane_with_box(rng)
    base = remove_ground(xyz, seed=5)
    for yaw in (0.3, 1.7, -2.5):
        c, s = math.cos(yaw), math.sin(yaw)
        rot = xyz @ np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]])
        np.testing.assert_array_equal(remove_ground(rot, seed=5), base)


def test_fit_plane_recovers_normal(rng):
    xy = rng.uniform(-5, 5, (100, 2))
    n_true = np.array([0.1, -0.2, 1.0])
    n_true /= np.linalg.norm(n_true)
    z = -(n_true[0] * xy[:, 0] + n_true[1] * xy[:, 1] + 0.5) / n_true[2]
    n, d = fit_plane(np.c_[xy, z])
    np.testing.assert_allclose(n, n_true, atol=1e-9)
    assert d == pytest.approx(0.5)


def test_too_few_points():
    assert remove_ground(np.zeros((2, 3))).tolist() == [False, False]


def test_geometric_scores(rng):
    ground = np.c_[rng.uniform(-20, 20, (300, 2)), np.full(300, -1.73)]
    assert np.all(geometric_scores(ground).scores == 0)
    xyz, is_ground = plane_with_box(rng)
    s = geometric_scores(xyz)
    assert s.detector == "geometric"
    np.testing.assert_array_equal(s.scores, (~is_ground).astype(float))
    assert len(geometric_scores(np.zeros((0, 3)))) == 0


def test_oracle_scores(rng):
    box = LabelBox3D(0, 1, ObjectClass.CAR, np.array([10.0, 0.0, -1.0]), (1.5, 1.8, 4.0), 0.2)
    pts = np.r_[rng.uniform(-20, 20, (400, 3)), [[10.0, 0.0, -1.0]]]
    s = oracle_scores(pts, [box])
    assert s.scores[-1] == 1.0
    np.testing.assert_array_equal(s.scores, (label_points(pts, [box]) == VEHICLE).astype(float))
    assert np.all(oracle_scores(pts, []).scores == 0)
    with pytest.raises(KeyError):
        oracle_scores(pts, None)


def test_point_scores_range():
    with pytest.raises(ValueError):
        PointScores(np.array([0.5, 1.5]), "net")


def test_min_inlier_fraction_controls_rejection(rng):
    xyz = np.r_[np.c_[rng.uniform(-20, 20, (300, 2)), np.full(300, -1.73)], random_sphere(rng, 700)]
    assert remove_ground(xyz, GroundConfig(min_inlier_fraction=0.1), seed=0)[:300].all()
    assert not remove_ground(xyz, GroundConfig(min_inlier_fraction=0.5), seed=0).any()
