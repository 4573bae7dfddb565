from __future__ import annotations

import math

import numpy as np
import pytest

from msgrasp.geometry import compute_geometry
from msgrasp.scenegen import (CORPUS_BIN, OBJECT_COUNTS, BinSpec, Primitive, PrimitiveScene,
                              corpus_scene, default_intrinsics, edge_wrapping_scene,
                              load_scene_config, random_scene, render, save_scene_config,
                              stacked_scene, surface_quality)

SMALL = (120, 160)          # 80 x 60 mm of floor, inside the default bin


def slab_depth(box: Primitive, intr, dims, floor):
    """Entry depth of every pixel ray into a yawed box (slab test in the box frame)."""
    v, u = np.mgrid[0:dims[0], 0:dims[1]].astype(float)
    dx = (u - intr.cx) / intr.fx
    dy = (v - intr.cy) / intr.fy
    t = math.radians(box.yaw)
    c, s = math.cos(t), math.sin(t)
    # ray p(z) = z * (dx, dy, 1) in camera coordinates; box frame origin at (x, y)
    lo_hi = []
    lx, ly, lz = box.size
    bottom = floor - box.base
    # local coordinates are linear in z: a + b * z with a = -R^T (x, y), b = R^T (dx, dy)
    ax, ay = -(c * box.x + s * box.y), -(-s * box.x + c * box.y)
    bx, by = c * dx + s * dy, -s * dx + c * dy
    for a, b, half in ((ax, bx, lx / 2), (ay, by, ly / 2)):
        with np.errstate(divide="ignore", invalid="ignore"):
            z1 = (-half - a) / b
            z2 = (half - a) / b
        inside = np.abs(a) <= half
        lo = np.where(b == 0, np.where(inside, -np.inf, np.inf), np.minimum(z1, z2))
        hi = np.where(b == 0, np.where(inside, np.inf, -np.inf), np.maximum(z1, z2))
        lo_hi.append((lo, hi))
    lo_hi.append((np.full(dims, bottom - lz), np.full(dims, bottom)))
    enter = np.max([lh[0] for lh in lo_hi], axis=0)
    leave = np.min([lh[1] for lh in lo_hi], axis=0)
    return np.where(enter <= leave, enter, np.inf)


def test_empty_bin_is_floor():
    r = render(PrimitiveScene([], noise=0.0), dims=SMALL)
    np.testing.assert_array_equal(r.scene.depth, 1.2)
    assert not r.ground_truth.gt_quality.any() and not r.ground_truth.instance_ids.any()
    np.testing.assert_array_equal(r.background, r.scene.depth)


def test_empty_bin_shows_walls_at_wide_view():
    r = render(PrimitiveScene([], noise=0.0))
    assert r.clean_depth.min() == pytest.approx(1.15)
    assert not r.ground_truth.instance_ids.any()


def test_box_top_area():
    dims = (160, 200)
    box = Primitive("box", 0.0, 0.0, (0.060, 0.045, 0.020))
    r = render(PrimitiveScene([box], noise=0.0), dims=dims)
    intr = default_intrinsics(dims[1], dims[0])
    z = 1.2 - 0.020
    analytic = (0.060 * intr.fx / z) * (0.045 * intr.fy / z)
    top = np.isclose(r.clean_depth, z, atol=1e-12) & (r.ground_truth.instance_ids == 1)
    assert abs(top.sum() - analytic) <= 0.02 * analytic


def test_overlapping_boxes_nearest_surface():
    low = Primitive("box", -0.008, 0.002, (0.040, 0.030, 0.012), yaw=20.0)
    high = Primitive("box", 0.010, -0.004, (0.025, 0.020, 0.030), yaw=-35.0)
    scene = PrimitiveScene([low, high], noise=0.0)
    r = render(scene, dims=SMALL)
    intr = default_intrinsics(SMALL[1], SMALL[0])
    d = np.stack([slab_depth(b, intr, SMALL, 1.2) for b in (low, high)])
    nearest = np.argmin(d, axis=0) + 1
    hit = np.isfinite(d.min(axis=0))
    want_ids = np.where(hit, nearest, 0)
    want_depth = np.where(hit, d.min(axis=0), 1.2)
    np.testing.assert_allclose(r.clean_depth, want_depth, atol=1e-12)
    # ownership may only differ where both boxes are hit at the same depth
    differ = r.ground_truth.instance_ids != want_ids
    assert not differ[~np.isclose(d[0], d[1], atol=1e-12)].any()
    assert (want_ids == 1).any() and (want_ids == 2).any()


def test_frustum_and_bin_rejection():
    far = Primitive("box", 0.060, 0.0, (0.02, 0.02, 0.02))
    with pytest.raises(ValueError, match="frustum"):
        render(PrimitiveScene([far]), dims=SMALL)
    with pytest.raises(ValueError, match="bin"):
        PrimitiveScene([Primitive("box", 0.069, 0.0, (0.02, 0.02, 0.02))])
    with pytest.raises(ValueError):
        Primitive("sphere", 0, 0, (1,))
    with pytest.raises(ValueError):
        Primitive("cylinder", 0, 0, (0.01, 0.02, 0.03))


def test_render_deterministic():
    scene = random_scene(7, 3, noise=5e-4, hole_rate=0.02)
    a, b = render(scene), render(scene)
    for x, y in ((a.scene.depth, b.scene.depth), (a.scene.intensity, b.scene.intensity),
                 (a.ground_truth.gt_quality, b.ground_truth.gt_quality), (a.background, b.background)):
        assert x.tobytes() == y.tobytes()
    assert np.isnan(a.scene.depth).mean() == pytest.approx(0.02, abs=0.005)
    other = render(PrimitiveScene(scene.primitives, noise=5e-4, hole_rate=0.02, seed=8))
    assert other.scene.depth.tobytes() != a.scene.depth.tobytes()


def test_noise_free_plane_has_zero_spread():
    r = render(PrimitiveScene([], noise=0.0), dims=SMALL)
    geo = compute_geometry(r.scene, preprocess=False)
    assert geo.valid_mask.all()
    assert np.all(geo.normal_std == 0.0)


def test_ground_truth_uses_clean_render():
    box = Primitive("box", 0.0, 0.0, (0.03, 0.03, 0.02))
    clean = render(PrimitiveScene([box], noise=0.0), dims=SMALL)
    noisy = render(PrimitiveScene([box], noise=2e-3, hole_rate=0.05), dims=SMALL)
    np.testing.assert_array_equal(clean.ground_truth.gt_quality, noisy.ground_truth.gt_quality)
    top = clean.ground_truth.gt_quality[clean.ground_truth.instance_ids == 1]
    assert top.max() == 1.0


def test_edge_wrapping_scene():
    scene = edge_wrapping_scene()
    assert [p.shape for p in scene.primitives] == ["wedge"]
    wedge = scene.primitives[0]
    face_mm = 1000 * wedge.size[0] / 2
    assert face_mm == pytest.approx(1.2 * 10.0)
    assert 10.0 < face_mm < 14.0
    r = render(scene)
    row = np.where(r.ground_truth.instance_ids[120] == 1, r.clean_depth[120], np.inf)
    # the ridge is the nearest line of the wedge and sits on the centre columns
    ridge = np.flatnonzero(row == row.min())
    assert set(ridge) == {159, 160}
    assert (r.surface_ids[120, 150] != r.surface_ids[120, 170])
    with pytest.raises(ValueError):
        edge_wrapping_scene(cup_diameter_mm=10.0, cup_spacing_mm=11.0)


def test_surface_quality_profile():
    r = render(edge_wrapping_scene())
    q = surface_quality(r)
    inst = r.ground_truth.instance_ids
    assert np.all(q[inst == 0] == 0)
    assert q[inst > 0].min() >= 0.6 and q.max() == 1.0


def test_random_scene_disjoint_and_inside():
    scene = random_scene(3, 6, bin_spec=CORPUS_BIN)
    assert len(scene.primitives) == 6
    pts = [(p.x, p.y, float(np.max(np.hypot(*(p.footprint_corners() - (p.x, p.y)).T))))
           for p in scene.primitives]
    for i, (x1, y1, r1) in enumerate(pts):
        for x2, y2, r2 in pts[i + 1:]:
            assert math.hypot(x1 - x2, y1 - y2) > r1 + r2
    with pytest.raises(ValueError):
        random_scene(0, 60)


def test_stacked_scene_rests_on_boxes():
    scene = stacked_scene(2, 3)
    lower, upper = scene.primitives[:3], scene.primitives[3:]
    for lo, up in zip(lower, upper):
        assert up.base == lo.size[2]
        assert up.size[0] < lo.size[0] and up.size[1] < lo.size[1]


@pytest.mark.parametrize("difficulty", ["simple", "typical", "complex"])
def test_corpus_scene_counts(difficulty):
    scene, camera = corpus_scene(11, difficulty)
    lo, hi = OBJECT_COUNTS[difficulty]
    n = len(scene.primitives) // (2 if difficulty == "complex" else 1)
    assert lo <= n <= hi
    assert scene.scene_id == f"{difficulty}-0011" and camera["width"] == 480


def test_config_roundtrip(tmp_path):
    scene = random_scene(5, 3, noise=2e-4)
    save_scene_config(scene, tmp_path / "s.yaml", {"fx": 2400.0})
    back, camera = load_scene_config(tmp_path / "s.yaml")
    assert back == scene and camera == {"fx": 2400.0}
    assert isinstance(back.bin, BinSpec)
