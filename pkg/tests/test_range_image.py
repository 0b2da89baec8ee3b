import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidartrack.config import ProjectionConfig
from lidartrack.range_image import (col_centres, dump_debug, elevation_edges, fov_contains, hflip_scan,
                                    occupancy, pixel_coords, project, rasterize_gt, read_pgm, row_centres,
                                    scores_to_points, unproject)

GEOM = ProjectionConfig()


def point(phi_deg, elev_deg, rho, refl=0.5):
    p, e = math.radians(phi_deg), math.radians(elev_deg)
    return [rho * math.cos(e) * math.cos(p), rho * math.cos(e) * math.sin(p), rho * math.sin(e), refl]


def pixel_scan(rng, n):
    """``n`` points at distinct pixel centres (collision free by construction)."""
    rows = row_centres(GEOM)
    # the outermost column centres sit on the FOV edge; float32 rounding could push them out
    cols = np.clip(col_centres(GEOM), -40.49, 40.49)
    flat = rng.choice(GEOM.height * GEOM.width, n, replace=False)
    r, c = np.divmod(flat, GEOM.width)
    return np.array([point(cols[j], rows[i], rng.uniform(2, 80), rng.uniform(0, 1)) for i, j in zip(r, c)],
                    dtype=np.float32), r, c


def test_geometry_shape():
    assert (GEOM.height, GEOM.width) == (64, 451)
    e = elevation_edges(GEOM)
    assert len(e) == 65 and e[0] == 2.0
    assert np.allclose(np.diff(e[:33]), -1 / 3) and np.allclose(np.diff(e[32:]), -0.5)


def test_centre_column_and_band_boundary():
    boundary = elevation_edges(GEOM)[32]
    img = project(np.array([point(0.0, boundary, 10.0)]))
    (r,), (c,) = np.nonzero(img.mask)
    assert c == 225
    assert r == 32
    assert img.range[r, c] == pytest.approx(10.0, abs=1e-6)


def test_fov_edges():
    img = project(np.array([point(41.0, 0.0, 10.0), point(40.5, 0.0, 10.0), point(-40.5, 0.0, 10.0)]))
    assert img.n_out_of_fov == 1
    assert img.mask[:, 450].any() and img.mask[:, 0].any()


def test_nearest_wins_both_orders():
    near, far = point(0.0, 0.0, 5.0), point(0.0, 0.0, 8.0)
    for pts in ([near, far], [far, near]):
        img = project(np.array(pts))
        assert img.mask.sum() == 1
        assert img.range[img.mask][0] == pytest.approx(5.0)


def test_equal_range_tie_goes_to_first_record():
    a, b = point(0.0, 0.0, 5.0, 0.1), point(0.0, 0.0, 5.0, 0.9)
    img = project(np.array([a, b]))
    assert img.index_map[img.mask][0] == 0


def test_out_of_band_dropped():
    img = project(np.array([point(0.0, 3.0, 10.0), point(0.0, -30.0, 10.0)]))
    assert img.mask.sum() == 0 and img.n_out_of_fov == 2


def test_stored_range_matches_source(rng):
    pts = rng.uniform(-40, 40, (3000, 4)).astype(np.float32)
    pts[:, 0] = np.abs(pts[:, 0]) + 1
    pts[:, 2] = rng.uniform(-3, 0.5, 3000)
    img = project(pts)
    m = img.mask
    src = pts[img.index_map[m], :3].astype(np.float64)
    np.testing.assert_allclose(img.range[m], np.linalg.norm(src, axis=1), atol=1e-6)
    assert (img.range[~m] == 0).all() and (img.index_map[~m] == -1).all()
    assert m.sum() <= min(len(pts) - img.n_out_of_fov, 64 * 451)


def test_monotone_indices(rng):
    phi = np.sort(rng.uniform(-40.5, 40.5, 500))
    _, col, _ = pixel_coords(np.array([point(p, 0.0, 10.0)[:3] for p in phi]), GEOM)
    assert (np.diff(col) >= 0).all()
    elev = np.sort(rng.uniform(-24.6, 1.9, 500))
    row, _, _ = pixel_coords(np.array([point(0.0, e, 10.0)[:3] for e in elev]), GEOM)
    assert (np.diff(row) <= 0).all()


def test_project_unproject_set_equality():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pts, _, _ = pixel_scan(rng, int(rng.integers(1, 400)))
        img = project(pts)
        idx, back, s = unproject(img, np.full(img.shape, 0.3), pts)
        assert sorted(idx.tolist()) == list(range(len(pts)))
        assert back.tobytes() == pts[idx].tobytes()
        assert np.all(s == 0.3)


def test_flip_mirrors_columns():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pts, _, _ = pixel_scan(rng, 300)
        a = project(pts)
        b = project(hflip_scan(pts))
        np.testing.assert_array_equal(b.range, a.range[:, ::-1])
        np.testing.assert_array_equal(b.reflectivity, a.reflectivity[:, ::-1])


@given(st.lists(st.tuples(st.floats(-40.4, 40.4), st.floats(-24.6, 1.9), st.floats(1.0, 80.0)),
                min_size=1, max_size=80))
def test_flip_mirror_random(samples):
    pts = np.array([point(*s) for s in samples])
    a, b = project(pts), project(hflip_scan(pts))
    # random points may share a pixel; mirrored occupancy holds regardless of which one wins
    np.testing.assert_array_equal(b.mask, a.mask[:, ::-1])
    np.testing.assert_allclose(b.range, a.range[:, ::-1])


def test_unproject_edge_cases():
    empty = project(np.zeros((0, 4)))
    idx, s = unproject(empty, np.zeros(empty.shape))
    assert len(idx) == 0 and len(s) == 0
    one = project(np.array([point(5.0, -5.0, 10.0)]))
    scores = np.zeros(one.shape)
    scores[one.mask] = 0.9
    idx, s = unproject(one, scores)
    assert idx.tolist() == [0] and s.tolist() == [0.9]
    with pytest.raises(ValueError):
        unproject(one, np.zeros((64, 448)))


def test_rasterize_gt():
    pts = np.array([point(0.0, 0.0, 5.0), point(10.0, -5.0, 20.0), point(0.0, 0.0, 9.0)])
    img = project(pts)
    np.testing.assert_array_equal(np.unique(rasterize_gt(img, np.array([1, 1, 1]))), [0, 1])
    gt = rasterize_gt(img, np.array([2, 1, 1]))
    assert gt[img.mask].tolist().count(2) == 1
    # near vehicle hides the far background point, whatever the record order
    for order in ([0, 2], [2, 0]):
        sub = pts[order]
        cls = np.array([2 if i == 0 else 1 for i in order])
        im = project(sub)
        assert rasterize_gt(im, cls)[im.mask].tolist() == [2]
    with pytest.raises(ValueError):
        rasterize_gt(img, np.array([1, 1]), 3)


def test_scores_to_points_defaults_zero():
    pts = np.array([point(0.0, 0.0, 5.0), point(0.0, 0.0, 9.0), point(60.0, 0.0, 9.0)])
    img = project(pts)
    out = scores_to_points(img, np.ones(img.shape), len(pts))
    assert out.tolist() == [1.0, 0.0, 0.0]


def test_debug_dump(tmp_path, rng):
    pts, _, _ = pixel_scan(rng, 200)
    img = project(pts)
    rp, fp = dump_debug(img, tmp_path / "f")
    g = read_pgm(rp)
    assert g.shape == (64, 451)
    assert ((g > 0) <= img.mask).all()
    assert read_pgm(fp).shape == (64, 451)


def test_wider_fov_occupies_more(rng):
    pts = np.array([point(p, e, 15.0) for p, e in zip(rng.uniform(-60, 60, 4000), rng.uniform(-20, 0, 4000))])
    occ = [project(pts, ProjectionConfig(azimuth_fov_deg=f)).mask.sum() for f in (20.0, 30.0, 40.5, 50.0)]
    assert occ == sorted(occ) and occ[0] < occ[-1]
    assert occupancy(project(pts)) > 0


def test_fov_contains():
    assert fov_contains(np.array([[1.0, 0.0], [1.0, 1.0], [-1.0, 0.0]])).tolist() == [True, False, False]


def test_column_ties_mirror():
    # +-0.27 deg sits exactly halfway between two column centres
    a = project(np.array([point(0.27, 0.0, 10.0)]))
    b = project(np.array([point(-0.27, 0.0, 10.0)]))
    np.testing.assert_array_equal(b.mask, a.mask[:, ::-1])
