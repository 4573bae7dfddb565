from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msgrasp.footprint import (Footprint, build_kernel_stack, convolve_quality, correlate2d,
                               cup_footprint, default_footprints, feasibility,
                               footprint_normal_std, load_footprint_set, match_footprints,
                               reduce_matches, rotate_pattern, save_footprint_set)
from oracles import naive_correlate, weighted_spread

S = 1.0 / np.sqrt(2.0)


def disk(r=4):
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y <= r * r).astype(float)


def soft_disk(r=12):
    """Disk with an anti-aliased rim, so that it is symmetric up to resampling."""
    y, x = np.mgrid[-r - 1:r + 2, -r - 1:r + 2]
    return np.clip(r + 0.5 - np.hypot(x, y), 0.0, 1.0)


def two_cup(ppm=1.0):
    return cup_footprint("pair", 1, [(-7.0, 0.0), (7.0, 0.0)], 10.0, ppm)


def roof(h, w, ridge_u):
    """Unit normals of a 90 degree roof whose ridge runs along v at column ridge_u."""
    n = np.empty((h, w, 3))
    n[:, :ridge_u] = (-S, 0.0, -S)
    n[:, ridge_u:] = (S, 0.0, -S)
    return n


def delta_stack():
    return build_kernel_stack([Footprint("dot", 0, np.ones((1, 1)), 1.0)], 90, 180)


# ---------------------------------------------------------------- kernel stack

def test_footprint_validation():
    with pytest.raises(ValueError):
        Footprint("even", 0, np.ones((2, 3)), 1.0)
    with pytest.raises(ValueError):
        Footprint("empty", 0, np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        Footprint("range", 0, np.full((3, 3), 2.0), 1.0)
    assert two_cup().cup_count == 2
    assert [f.cup_count for f in default_footprints()] == [1, 3, 2, 4]


def test_stack_errors():
    with pytest.raises(ValueError):
        build_kernel_stack([])
    with pytest.raises(ValueError):
        build_kernel_stack([two_cup(1.0), two_cup(2.0)])
    with pytest.raises(ValueError):
        build_kernel_stack([two_cup()], 7, 180)


def test_unit_sum_and_layout():
    k = build_kernel_stack(default_footprints(1.0), 5, 180)
    assert k.n_rotations == 36 and k.n_channels == 144
    np.testing.assert_allclose(k.channels.sum(axis=(1, 2)), 1.0, atol=1e-9)
    assert k.channel_index[k.channel(2, 3)] == (2, 15.0)
    # every footprint fits into the frame at every rotation
    assert np.all(k.channels[:, 0, :] == 0) and np.all(k.channels[:, :, -1] == 0)


def test_disk_channels_all_equal():
    k = build_kernel_stack([Footprint("disk", 0, soft_disk(), 1.0)], 5, 180)
    for c in k.channels[1:]:
        assert np.abs(c - k.channels[0]).max() <= 1e-3


def test_zero_rotation_is_padded_original():
    fp = two_cup()
    k = build_kernel_stack([fp], 5, 180)
    hk = k.size[0]
    h, w = fp.pattern.shape
    oy, ox = (hk - h) // 2, (hk - w) // 2
    want = np.zeros(k.size)
    want[oy:oy + h, ox:ox + w] = fp.pattern / fp.pattern.sum()
    np.testing.assert_array_equal(k.channels[0], want)


def test_ninety_degrees_is_transpose():
    pattern = np.zeros((5, 21))
    pattern[:, :5] = 1.0
    pattern[:, -5:] = 1.0
    k = build_kernel_stack([Footprint("pair", 1, pattern, 1.0)], 90, 180)
    zero, ninety = k.channels
    # a symmetric two-cup pattern turned by 90 degrees equals its transpose
    assert np.abs(ninety - zero.T).max() <= 1e-3
    # the generic oracle for a quarter turn (x toward y) is transpose plus flip
    asym = np.zeros((7, 7))
    asym[3, 3:] = 1.0
    asym[0, 0] = 0.5
    np.testing.assert_allclose(rotate_pattern(asym, 90, 7), np.rot90(asym, -1), atol=1e-12)


# ---------------------------------------------------------------- correlation

def test_delta_kernel_returns_q(rng):
    q = rng.random((12, 15))
    out = convolve_quality(q, delta_stack())
    np.testing.assert_allclose(out, np.broadcast_to(q, out.shape), atol=1e-12)


def test_constant_quality_interior():
    k = build_kernel_stack([two_cup()], 30, 180)
    out = convolve_quality(np.full((60, 60), 0.7), k)
    r = k.size[0] // 2
    np.testing.assert_allclose(out[:, r:-r, r:-r], 0.7, atol=1e-12)
    assert out.max() <= 0.7 + 1e-12 and out.min() >= 0


def test_correlate_matches_naive(rng):
    q = rng.random((16, 16))
    ker = rng.random((5, 5))
    np.testing.assert_allclose(correlate2d(q, ker), naive_correlate(q, ker), atol=1e-10)


@given(st.integers(0, 2**31 - 1), st.integers(5, 64), st.integers(5, 64),
       st.sampled_from([1, 3, 5, 9]), st.sampled_from([1, 3, 7]))
def test_correlate_oracle_gate(seed, h, w, kh, kw):
    r = np.random.default_rng(seed)
    q = r.random((h, w))
    ker = r.random((kh, kw))
    np.testing.assert_allclose(correlate2d(q, ker), naive_correlate(q, ker), atol=1e-8)


# ---------------------------------------------------------------- normal spread

def test_spread_constant_field_is_zero():
    k = build_kernel_stack(default_footprints(1.0), 45, 180)
    n = np.broadcast_to(np.array([0.3, -0.2, -0.932737905308882]), (50, 50, 3)).copy()
    assert np.all(footprint_normal_std(n, k) == 0.0)


def test_spread_delta_is_zero(rng):
    from conftest import random_normals
    out = footprint_normal_std(random_normals(rng, (10, 12)), delta_stack())
    np.testing.assert_allclose(out, 0.0, atol=1e-7)


def test_spread_ridge_matches_weighted_oracle():
    k = build_kernel_stack([two_cup()], 45, 180)
    n = roof(40, 60, 30)
    valid = np.ones((40, 60), bool)
    valid[5, 26] = False
    std = footprint_normal_std(n, k, valid)
    for c in range(k.n_channels):
        for v in (5, 20):
            for u in (27, 29, 30, 31, 34):
                want = weighted_spread(n, valid, k.channels[c], v, u)
                assert abs(std[c, v, u] - want) <= 1e-8
    # straddling the ridge with one cup per face is the worst case: |x| spread = S
    assert std[0, 20, 30] == pytest.approx(S, abs=1e-8)


@given(st.integers(0, 2**31 - 1))
def test_spread_random_matches_oracle(seed):
    from conftest import random_normals
    r = np.random.default_rng(seed)
    ker = r.random((5, 3))
    k = build_kernel_stack([Footprint("rand", 0, ker, 1.0)], 90, 180)
    n = random_normals(r, (9, 11))
    valid = r.random((9, 11)) > 0.2
    std = footprint_normal_std(n, k, valid)
    v, u = int(r.integers(9)), int(r.integers(11))
    for c in range(2):
        assert abs(std[c, v, u] - weighted_spread(n, valid, k.channels[c], v, u)) <= 1e-8


# ---------------------------------------------------------------- feasibility

def test_feasibility_examples(rng):
    fq = rng.random((3, 5, 5))
    np.testing.assert_allclose(feasibility(fq, np.zeros_like(fq), 0.1), fq / 0.1)
    assert np.argmax(feasibility(fq, np.zeros_like(fq)), 0).tolist() == np.argmax(fq, 0).tolist()
    assert not feasibility(np.zeros((2, 3, 3)), rng.random((2, 3, 3))).any()
    np.testing.assert_array_equal(feasibility(fq, None, use_penalty=False), fq)
    with pytest.raises(ValueError):
        feasibility(fq, np.zeros((1, 5, 5)))
    with pytest.raises(ValueError):
        feasibility(fq, fq, epsilon=0.0)


def test_ridge_straddle_scores_below_flat_face():
    single = cup_footprint("single", 0, [(0.0, 0.0)], 10.0, 1.0)
    k = build_kernel_stack([single, two_cup()], 90, 180)
    h, w, ridge = 40, 80, 40
    q = np.ones((h, w))
    n = roof(h, w, ridge)
    f = feasibility(convolve_quality(q, k), footprint_normal_std(n, k))
    straddle = f[k.channel(1, 0), 20, ridge]
    flat = f[k.channel(0, 0), 20, ridge + 12]
    assert straddle < flat


# ---------------------------------------------------------------- reduction

def test_reduce_single_channel(rng):
    k = build_kernel_stack([two_cup()], 180, 180)
    s = rng.random((1, 6, 7))
    m = reduce_matches(s, k)
    assert np.all(m.o_type == 1) and np.all(m.o_rot == 0)
    np.testing.assert_array_equal(m.o_q, s[0])


def test_reduce_dominance_and_ties():
    a = cup_footprint("a", 0, [(0.0, 0.0)], 4.0, 1.0)
    b = cup_footprint("b", 3, [(0.0, 0.0)], 4.0, 1.0)
    k = build_kernel_stack([a, b], 180, 180)
    s = np.stack([np.full((4, 4), 0.2), np.full((4, 4), 0.5)])
    assert np.all(reduce_matches(s, k).o_type == 3)
    tie = np.full((2, 4, 4), 0.5)
    assert np.all(reduce_matches(tie, k).o_channel == 0)
    with pytest.raises(ValueError):
        reduce_matches(s[:1], k)


@given(st.integers(0, 2**31 - 1))
def test_reduce_matches_linear_scan(seed):
    r = np.random.default_rng(seed)
    k = build_kernel_stack([two_cup()], 60, 180)
    s = r.integers(0, 4, (3, 8, 8)) / 4.0          # coarse values force ties
    m = reduce_matches(s, k)
    for v in range(8):
        for u in range(8):
            best, arg = -1.0, -1
            for c in range(3):
                if s[c, v, u] > best:
                    best, arg = s[c, v, u], c
            assert m.o_channel[v, u] == arg and m.o_q[v, u] == best
            f, angle = k.channel_index[arg]
            assert m.o_rot[v, u] == angle and m.o_type[v, u] == k.footprints[f].gripper_type
    assert np.all(m.o_q >= s.max(axis=0)) and np.all((m.o_rot >= 0) & (m.o_rot < 180))


# ---------------------------------------------------------------- streamed matching

def _full(q, n, k, **kw):
    return reduce_matches(feasibility(convolve_quality(q, k), footprint_normal_std(n, k), **kw), k,
                          keep_raw=True)


@pytest.mark.parametrize("use_penalty", [True, False])
def test_match_equals_composed_stages(rng, use_penalty):
    from conftest import random_normals
    k = build_kernel_stack(default_footprints(0.5), 30, 180)
    q = rng.random((30, 40))
    n = random_normals(rng, (30, 40))
    m = match_footprints(q, n, k, use_penalty=use_penalty, chunk=5, emit_raw=True)
    if use_penalty:
        want = _full(q, n, k)
    else:
        want = reduce_matches(convolve_quality(q, k), k, keep_raw=True)
    np.testing.assert_allclose(m.raw_feasibility, want.raw_feasibility, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(m.o_q, want.o_q, rtol=1e-10, atol=1e-12)
    # o_q bounds every channel at every pixel
    assert np.all(m.o_q[None] >= m.raw_feasibility)
    np.testing.assert_array_equal(
        np.take_along_axis(m.raw_feasibility, m.o_channel[None], 0)[0], m.o_q)


def test_match_identical_channels_tie_to_first(rng):
    # a disk is unchanged by quarter turns, so rotated channels duplicate channel 0
    k = build_kernel_stack([Footprint("disk", 0, disk(3), 1.0)], 90, 360)
    q = rng.random((20, 20))
    m = match_footprints(q, None, k, use_penalty=False, emit_raw=True)
    assert np.all(m.o_channel == 0)
    np.testing.assert_array_equal(m.raw_feasibility[2], m.raw_feasibility[0])


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_scale_monotone(seed, c):
    from conftest import random_normals
    r = np.random.default_rng(seed)
    k = build_kernel_stack([two_cup(0.5), cup_footprint("s", 0, [(0, 0)], 6.0, 0.5)], 45, 180)
    q = r.random((20, 24))
    q[q < 0.3] = 0.0
    n = random_normals(r, (20, 24))
    a = match_footprints(q, n, k, emit_raw=True)
    b = match_footprints(c * q, n, k, emit_raw=True)
    np.testing.assert_allclose(b.raw_feasibility, c * a.raw_feasibility, rtol=1e-9, atol=1e-12)
    # argmax only changes where channels are numerically tied
    top = np.sort(a.raw_feasibility, axis=0)
    clear = top[-1] - top[-2] > 1e-9 * np.maximum(top[-1], 1e-300)
    assert np.array_equal(a.o_channel[clear], b.o_channel[clear])


def test_rotational_consistency(rng):
    from conftest import random_normals
    fp = cup_footprint("pair", 1, [(-3.0, 1.0), (4.0, 0.0)], 4.0, 1.0)
    k = build_kernel_stack([fp], 90, 180)
    n_px = 31
    q = rng.random((n_px, n_px))
    n = random_normals(rng, (n_px, n_px))
    q_rot = np.rot90(q, -1)
    # the vector field turns with the image: x toward y
    n_rot = np.rot90(n, -1).copy()
    n_rot[..., 0] = -np.rot90(n[..., 1], -1)
    n_rot[..., 1] = np.rot90(n[..., 0], -1)
    f = feasibility(convolve_quality(q, k), footprint_normal_std(n, k))
    g = feasibility(convolve_quality(q_rot, k), footprint_normal_std(n_rot, k))
    # pixel (v, u) maps to (u, n - 1 - v) under the quarter turn
    np.testing.assert_allclose(g[1], np.rot90(f[0], -1), atol=1e-3)


# ---------------------------------------------------------------- files

def test_footprint_set_roundtrip(tmp_path):
    fps = default_footprints(1.0)
    save_footprint_set(fps, tmp_path / "set.txt")
    back = load_footprint_set(tmp_path / "set.txt")
    assert [(f.name, f.gripper_type, f.pixels_per_mm) for f in back] == \
        [(f.name, f.gripper_type, f.pixels_per_mm) for f in fps]
    for a, b in zip(fps, back):
        np.testing.assert_array_equal(a.pattern, b.pattern)
