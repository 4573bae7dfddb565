"""Sliding-window sums and masked window statistics.

Windows are square with an odd side length and centered on each pixel.
Pixels outside the grid contribute nothing. The box sum is computed
separably (rows, then columns) by adding shifted copies, which keeps the
summation order fixed and makes sums over all-zero regions exactly zero.
"""

from __future__ import annotations

import numpy as np


def _check_window(window: int) -> int:
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    return window // 2


def box_sum(a: np.ndarray, window: int) -> np.ndarray:
    """Sum of ``a`` over a ``window`` x ``window`` box around each pixel.

    Works on (h, w) grids and on (h, w, ...) stacks of per-pixel values.
    """
    r = _check_window(window)
    a = np.asarray(a, dtype=np.float64)
    out = a
    for axis in (0, 1):
        pad = [(0, 0)] * a.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad)
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for k in range(window):
            acc += np.take(padded, np.arange(k, k + n), axis=axis)
        out = acc
    return out


def masked_mean_var(values: np.ndarray, mask: np.ndarray, window: int,
                    reference: np.ndarray | float = 0.0):
    """Per-pixel mean and population variance of ``values`` over valid pixels.

    ``values`` is (h, w) or (h, w, c); statistics are per component.
    ``reference`` is subtracted before accumulation; variance is invariant
    to it, but a reference close to the data keeps the one-pass formula
    well conditioned. Returns ``(mean, var, count)``; mean and var are NaN
    where the window holds no valid pixel.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    w = mask.astype(np.float64)
    centered = np.where(mask[..., None] if values.ndim == 3 else mask,
                        values - reference, 0.0)
    count = box_sum(w, window)
    if values.ndim == 3:
        count_b = count[..., None]
    else:
        count_b = count
    s1 = box_sum(centered, window)
    s2 = box_sum(centered * centered, window)
    with np.errstate(invalid="ignore", divide="ignore"):
        m1 = s1 / count_b
        var = s2 / count_b - m1 * m1
    var = np.maximum(var, 0.0)
    mean = m1 + reference
    empty = count_b == 0
    mean = np.where(empty, np.nan, mean)
    var = np.where(empty, np.nan, var)
    return mean, var, count
