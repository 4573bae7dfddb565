"""Depth preprocessing, ordered point clouds and surface normal features.

Pixel coordinates follow the image convention: ``u`` is the column index
(camera x direction), ``v`` the row index (camera y direction). Grids are
indexed ``[v, u]``. Camera frame: x right, y down, z along the optical axis.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import formats
from .windows import box_sum, masked_mean_var


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not all(np.isfinite([self.fx, self.fy, self.cx, self.cy])):
            raise ValueError("intrinsics must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixel coordinates (..., 2) as (u, v)."""
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        u = self.fx * points[..., 0] / z + self.cx
        v = self.fy * points[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "CameraIntrinsics":
        kv = formats.read_keyvalue(path)
        missing = [k for k in ("fx", "fy", "cx", "cy") if k not in kv]
        if missing:
            raise formats.FormatError(f"{path}: missing intrinsics {', '.join(missing)}")
        extra = sorted(set(kv) - {"fx", "fy", "cx", "cy"})
        if extra:
            raise formats.FormatError(f"{path}: unknown intrinsics keys {', '.join(extra)}")
        return cls(*(float(kv[k]) for k in ("fx", "fy", "cx", "cy")))

    def to_file(self, path: str | os.PathLike) -> None:
        formats.write_keyvalue(path, {"fx": repr(self.fx), "fy": repr(self.fy),
                                      "cx": repr(self.cx), "cy": repr(self.cy)})


@dataclass
class SceneGrid:
    """Registered intensity and depth channels plus camera intrinsics."""

    intensity: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {self.depth.shape}")
        if self.intensity.shape != self.depth.shape:
            raise ValueError(f"intensity {self.intensity.shape} and depth "
                             f"{self.depth.shape} dimensions differ")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return valid_depth(self.depth)


@dataclass
class GeometryMaps:
    points: np.ndarray       # (h, w, 3), NaN where invalid
    normals: np.ndarray      # (h, w, 3) unit, camera facing, NaN where invalid
    normal_std: np.ndarray   # (h, w) in [0, 1], NaN where invalid
    valid_mask: np.ndarray   # (h, w) bool
    depth: Optional[np.ndarray] = None  # preprocessed depth the maps were built from


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0)


def fill_depth_holes(depth: np.ndarray, max_hole_radius: int = 5) -> np.ndarray:
    """Fill invalid pixels with the median of nearby valid depths.

    For every invalid pixel the window grows from 3x3 up to
    ``2 * max_hole_radius + 1``; the first window that contains a valid
    (original, not filled) pixel supplies the median. Pixels without a
    valid pixel in the largest window stay invalid (NaN).
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = valid_depth(depth)
    out = np.where(valid, depth, np.nan)
    if valid.all() or not valid.any() or max_hole_radius < 1:
        return out
    h, w = depth.shape
    radius = np.zeros(depth.shape, dtype=np.int64)
    pending = ~valid
    vf = valid.astype(np.float64)
    for r in range(1, max_hole_radius + 1):
        reach = pending & (box_sum(vf, 2 * r + 1) > 0)
        radius[reach] = r
        pending &= ~reach
    for v, u in zip(*np.nonzero(radius)):
        r = radius[v, u]
        sl = (slice(max(v - r, 0), min(v + r + 1, h)), slice(max(u - r, 0), min(u + r + 1, w)))
        out[v, u] = np.median(depth[sl][valid[sl]])
    return out


def suppress_depth_outliers(depth: np.ndarray, window: int = 5, z_thresh: float = 3.0,
                            chunk_rows: int = 64) -> np.ndarray:
    """Replace depth outliers by their window median.

    A valid pixel is an outlier when it deviates from the median of the
    valid depths in its window by more than ``z_thresh`` times their median
    absolute deviation (taken about that same median). Invalid pixels are
    left untouched and never enter the statistics.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    depth = np.asarray(depth, dtype=np.float64)
    valid = valid_depth(depth)
    out = np.where(valid, depth, np.nan)
    r = window // 2
    padded = np.pad(out, r, constant_values=np.nan)
    views = sliding_window_view(padded, (window, window))
    h = depth.shape[0]
    for v0 in range(0, h, chunk_rows):
        v1 = min(v0 + chunk_rows, h)
        sel = valid[v0:v1]
        if not sel.any():
            continue
        win = views[v0:v1][sel].reshape(-1, window * window)
        med = np.nanmedian(win, axis=1)
        mad = np.nanmedian(np.abs(win - med[:, None]), axis=1)
        centre = out[v0:v1][sel]
        bad = np.abs(centre - med) > z_thresh * mad
        block = out[v0:v1]
        vals = block[sel]
        vals[bad] = med[bad]
        block[sel] = vals
    return out


def deproject(depth: np.ndarray, intrinsics: CameraIntrinsics):
    """Ordered point cloud ``depth(u, v) * K^-1 (u, v, 1)^T``.

    Returns ``(points, valid_mask)``; points are NaN at invalid pixels.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = valid_depth(depth)
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    d = np.where(valid, depth, np.nan)
    x = d * (u - intrinsics.cx) / intrinsics.fx
    y = d * (v - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, d], axis=-1), valid


def estimate_normals(points: np.ndarray, valid_mask: np.ndarray, window: int = 7):
    """Unit surface normals from a local least-squares plane fit.

    The normal at a pixel is the eigenvector of the smallest eigenvalue of
    the covariance of the valid points in its window, flipped to face the
    camera. Offsets are taken relative to the centre point, so surfaces
    whose depth is constant in a window give exactly ``(0, 0, -1)``.
    Returns ``(normals, normal_valid)``; pixels with fewer than three
    valid neighbours (or an invalid centre) are invalid and NaN.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    points = np.asarray(points, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    h, w = valid.shape
    r = window // 2
    pp = np.pad(np.where(valid[..., None], points, 0.0), ((r, r), (r, r), (0, 0)))
    vp = np.pad(valid, r)
    n = np.zeros((h, w))
    s1 = np.zeros((h, w, 3))
    s2 = np.zeros((h, w, 6))
    pairs = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    centre = np.where(valid[..., None], points, 0.0)
    for dv in range(window):
        for du in range(window):
            m = vp[dv:dv + h, du:du + w] & valid
            d = np.where(m[..., None], pp[dv:dv + h, du:du + w] - centre, 0.0)
            n += m
            s1 += d
            for k, (i, j) in enumerate(pairs):
                s2[..., k] += d[..., i] * d[..., j]
    ok = valid & (n >= 3)
    normals = np.full((h, w, 3), np.nan)
    if not ok.any():
        return normals, ok
    cnt = n[ok][:, None]
    m1 = s1[ok] / cnt
    m2 = s2[ok] / cnt
    cov = np.empty((m1.shape[0], 3, 3))
    for k, (i, j) in enumerate(pairs):
        cov[:, i, j] = cov[:, j, i] = m2[:, k] - m1[:, i] * m1[:, j]
    _, vecs = np.linalg.eigh(cov)
    nrm = vecs[:, :, 0]
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    # face the camera: negative z; for z == 0 fall back to the viewing ray
    z = nrm[:, 2]
    ray_dot = np.einsum("ij,ij->i", nrm, points[ok])
    flip = (z > 0) | ((z == 0) & (ray_dot > 0))
    nrm[flip] *= -1.0
    normals[ok] = nrm
    return normals, ok


CAMERA_FACING = np.array([0.0, 0.0, -1.0])
SPREAD_VAR_FLOOR = 1e-14   # summed variance below this (std < 1e-7) counts as flat


def normal_std_map(normals: np.ndarray, valid_mask: np.ndarray, window: int = 21,
                   sigma_max: float = 0.5) -> np.ndarray:
    """Local normal spread: Euclidean norm of per-component standard deviations.

    Statistics use the valid normals of the window. The result is divided
    by ``sigma_max`` and clamped to [0, 1]; invalid pixels are NaN.
    """
    if sigma_max <= 0:
        raise ValueError("sigma_max must be positive")
    valid = np.asarray(valid_mask, dtype=bool)
    safe = np.where(valid[..., None], normals, 0.0)
    _, var, _ = masked_mean_var(safe, valid, window, reference=CAMERA_FACING)
    total = np.sum(var, axis=-1)
    # one-pass variance of a constant field leaves round-off of ~1e-17
    total[total < SPREAD_VAR_FLOOR] = 0.0
    spread = np.sqrt(total) / sigma_max
    return np.where(valid, np.clip(spread, 0.0, 1.0), np.nan)


def compute_geometry(scene: SceneGrid, max_hole_radius: int = 5, outlier_window: int = 5,
                     outlier_z_thresh: float = 3.0, normal_window: int = 7,
                     std_window: int = 21, sigma_max: float = 0.5,
                     preprocess: bool = True) -> GeometryMaps:
    """Run depth preprocessing and derive points, normals and normal spread."""
    depth = scene.depth
    if preprocess:
        depth = fill_depth_holes(depth, max_hole_radius)
        depth = suppress_depth_outliers(depth, outlier_window, outlier_z_thresh)
    points, _ = deproject(depth, scene.intrinsics)
    normals, nvalid = estimate_normals(points, valid_depth(depth), normal_window)
    std = normal_std_map(normals, nvalid, std_window, sigma_max)
    return GeometryMaps(points=points, normals=normals, normal_std=std,
                        valid_mask=nvalid, depth=depth)
