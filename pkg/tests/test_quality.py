from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msgrasp import formats
from msgrasp.quality import (QualityFileError, QualityMap, QualitySource, balance_weights,
                             load_quality, save_quality, weighted_mse)


def test_quality_map_validation():
    with pytest.raises(ValueError):
        QualityMap(np.array([[1.2]]))
    with pytest.raises(ValueError):
        QualityMap(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        QualityMap(np.zeros(4))
    assert QualityMap(np.zeros((2, 2)), "external").source is QualitySource.EXTERNAL


def test_load_constant(tmp_path):
    p = tmp_path / "q.pfm"
    save_quality(p, np.full((4, 4), 0.5))
    q = load_quality(p, (4, 4))
    assert q.source is QualitySource.EXTERNAL
    np.testing.assert_array_equal(q.values, 0.5)


def test_load_out_of_range_strict_or_clamped(tmp_path):
    p = tmp_path / "q.pfm"
    g = np.full((3, 3), 0.25)
    g[1, 1] = 1.7
    formats.write_pfm(p, g)
    with pytest.raises(QualityFileError, match="outside"):
        load_quality(p, (3, 3))
    q = load_quality(p, (3, 3), strict=False)
    assert q.values[1, 1] == 1.0 and q.values[0, 0] == 0.25


def test_load_dimension_mismatch_reports_both(tmp_path):
    p = tmp_path / "q.pfm"
    save_quality(p, np.zeros((4, 4)))
    with pytest.raises(QualityFileError) as exc:
        load_quality(p, (8, 8))
    assert "4x4" in str(exc.value) and "8x8" in str(exc.value)


def test_load_non_finite_rejected(tmp_path):
    p = tmp_path / "q.pfm"
    g = np.zeros((2, 2))
    g[0, 1] = np.inf
    formats.write_pfm(p, g)
    with pytest.raises(QualityFileError):
        load_quality(p, (2, 2), strict=False)


def test_mse_zero_when_equal(rng):
    x = rng.random((5, 5))
    assert weighted_mse(x, x, rng.random((5, 5)) > 0.5) == 0.0


@pytest.mark.parametrize("n_bg", [0, 1, 7, 15, 16])
def test_mse_all_wrong_is_one(n_bg):
    bg = np.zeros(16, bool)
    bg[:n_bg] = True
    assert weighted_mse(np.zeros((4, 4)), np.ones((4, 4)), bg.reshape(4, 4)) == pytest.approx(1.0)


def test_mse_hand_computed():
    labels = np.array([[1.0, 1.0], [0.0, 0.0]])
    pred = np.array([[0.5, 1.0], [0.0, 0.5]])
    bg = np.array([[False, False], [True, True]])
    # E^2 = (0.25, 0, 0, 0.25); w_bg = w_fg = 4 / (2 * 2) = 1
    # bg term 0.25 / 4, fg term 0.25 / 4
    assert weighted_mse(pred, labels, bg) == pytest.approx(0.125, abs=1e-15)


def test_balance_weights():
    assert balance_weights(np.array([True, False, False, False])) == (2.0, 4.0 / 6.0)
    assert balance_weights(np.zeros(3, bool)) == (0.0, 1.0)
    assert balance_weights(np.ones(3, bool)) == (1.0, 0.0)


@given(st.integers(0, 2**31 - 1))
def test_mse_properties(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((6, 6)), r.random((6, 6))
    bg = r.random((6, 6)) > 0.5
    e = weighted_mse(a, b, bg)
    assert e == weighted_mse(b, a, bg)
    assert e > 0
    half = np.zeros((6, 6), bool)
    half[:3] = True
    assert weighted_mse(a, b, half) == pytest.approx(np.mean((a - b) ** 2), abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        weighted_mse(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2), bool))
