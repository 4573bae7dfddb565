"""Pixel-wise grasp quality maps and the foreground/background weighted error."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from . import formats


class QualitySource(str, enum.Enum):
    EXTERNAL = "external"
    ANALYTIC = "analytic"


@dataclass
class QualityMap:
    values: np.ndarray
    source: QualitySource = QualitySource.ANALYTIC

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"quality map must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("quality map contains non-finite values")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("quality values must lie in [0, 1]")
        self.source = QualitySource(self.source)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class QualityFileError(ValueError):
    pass


def load_quality(path: str | os.PathLike, expected_dims: tuple[int, int],
                 strict: bool = True) -> QualityMap:
    """Load an externally produced quality map from a PFM file.

    ``expected_dims`` is ``(height, width)``. In strict mode values outside
    [0, 1] are rejected; otherwise they are clamped.
    """
    grid = formats.read_pfm(path)
    if grid.shape != tuple(expected_dims):
        raise QualityFileError(f"{path}: quality map is {grid.shape[0]}x{grid.shape[1]} "
                               f"(h x w) but the scene is {expected_dims[0]}x{expected_dims[1]}")
    if not np.all(np.isfinite(grid)):
        raise QualityFileError(f"{path}: quality map contains non-finite values")
    lo, hi = grid.min(), grid.max()
    if lo < 0.0 or hi > 1.0:
        if strict:
            raise QualityFileError(f"{path}: quality values span [{lo:g}, {hi:g}], outside [0, 1]")
        grid = np.clip(grid, 0.0, 1.0)
    return QualityMap(grid, QualitySource.EXTERNAL)


def save_quality(path: str | os.PathLike, q: QualityMap | np.ndarray) -> None:
    values = q.values if isinstance(q, QualityMap) else np.asarray(q)
    formats.write_pfm(path, values)


def balance_weights(bg_mask: np.ndarray) -> tuple[float, float]:
    """Inverse-frequency weights ``(w_bg, w_fg)`` for one image.

    ``w = N / (2 N_class)``, so a perfectly balanced image gets 1 for both.
    When a class is empty its weight is 0 and the other becomes 1.
    """
    bg = np.asarray(bg_mask, dtype=bool)
    n = bg.size
    n_bg = int(bg.sum())
    n_fg = n - n_bg
    if n_bg == 0:
        return 0.0, 1.0
    if n_fg == 0:
        return 1.0, 0.0
    return n / (2.0 * n_bg), n / (2.0 * n_fg)


def weighted_mse(prediction, labels, bg_mask: np.ndarray) -> float:
    """Class-balanced squared error between a prediction and reference labels.

    ``w_bg * MSE(bg * E) + w_fg * MSE((1 - bg) * E)`` with ``E = labels -
    prediction``. Both MSE terms average over all pixels of the image.
    """
    p = prediction.values if isinstance(prediction, QualityMap) else np.asarray(prediction, float)
    l = labels.values if isinstance(labels, QualityMap) else np.asarray(labels, float)
    bg = np.asarray(bg_mask, dtype=bool)
    if not (p.shape == l.shape == bg.shape):
        raise ValueError(f"shape mismatch: prediction {p.shape}, labels {l.shape}, mask {bg.shape}")
    err = l - p
    w_bg, w_fg = balance_weights(bg)
    sq = err * err
    return float(w_bg * np.mean(np.where(bg, sq, 0.0)) + w_fg * np.mean(np.where(bg, 0.0, sq)))
