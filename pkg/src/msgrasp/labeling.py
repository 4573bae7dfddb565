"""Automatic grasp quality labels from surface flatness and cluster centrality.

Labels combine a flatness term (``1 - normal_std``) with a centrality term
that peaks inside each graspable cluster, and are zero off the objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import valid_depth
from .quality import QualityMap, QualitySource

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class LabelConfig:
    w_std: float = 0.5
    w_dist: float = 0.5
    graspable_threshold: float = 0.8
    bg_depth_delta: float = 0.01
    min_cluster_size: int = 100
    pixels_per_mm: float = 2.0

    def __post_init__(self):
        if self.w_std < 0 or self.w_dist < 0 or self.w_std + self.w_dist <= 0:
            raise ValueError("label weights must be non-negative and not both zero")
        total = self.w_std + self.w_dist
        self.w_std, self.w_dist = self.w_std / total, self.w_dist / total
        if not 0.0 < self.graspable_threshold < 1.0:
            raise ValueError("graspable_threshold must lie in (0, 1)")
        if self.pixels_per_mm <= 0:
            raise ValueError("pixels_per_mm must be positive")


@dataclass
class ClusterMap:
    labels: np.ndarray                       # int grid, 0 = no cluster
    centroids: list = field(default_factory=list)  # (u, v) per cluster id 1..K
    sizes: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.sizes)


def background_mask(scene_depth: np.ndarray, background_depth: np.ndarray,
                    delta: float = 0.01) -> np.ndarray:
    """Foreground mask by depth subtraction against an empty-bin recording.

    True marks object pixels: both depths valid and the scene closer to the
    camera than the background by more than ``delta`` meters.
    """
    scene_depth = np.asarray(scene_depth, dtype=np.float64)
    background_depth = np.asarray(background_depth, dtype=np.float64)
    if scene_depth.shape != background_depth.shape:
        raise ValueError(f"scene {scene_depth.shape} and background "
                         f"{background_depth.shape} dimensions differ")
    ok = valid_depth(scene_depth) & valid_depth(background_depth)
    with np.errstate(invalid="ignore"):
        closer = (background_depth - scene_depth) > delta
    return ok & closer


def mask_from_instances(instance_masks, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Union of instance masks; everything outside every mask is background."""
    masks = [np.asarray(m, dtype=bool) for m in instance_masks]
    if not masks:
        if shape is None:
            raise ValueError("shape is required when no instance masks are given")
        return np.zeros(shape, dtype=bool)
    first = masks[0].shape
    for m in masks[1:]:
        if m.shape != first:
            raise ValueError(f"instance masks differ in shape: {first} vs {m.shape}")
    return np.logical_or.reduce(masks)


def masks_from_id_image(ids: np.ndarray) -> list[np.ndarray]:
    ids = np.asarray(ids)
    return [ids == k for k in np.unique(ids) if k != 0]


def cluster_graspable(l_std: np.ndarray, fg_mask: np.ndarray, threshold: float = 0.8,
                      min_size: int = 100) -> ClusterMap:
    """8-connected clusters of foreground pixels with ``l_std >= threshold``.

    Clusters below ``min_size`` pixels are dropped. Ids are 1..K in order of
    each cluster's first pixel in row-major scan order.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    l_std = np.asarray(l_std, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        sel = np.asarray(fg_mask, dtype=bool) & (l_std >= threshold)
    raw, n = ndimage.label(sel, structure=EIGHT_CONNECTED)
    if n == 0:
        return ClusterMap(np.zeros(l_std.shape, dtype=np.int64))
    sizes = np.bincount(raw.ravel(), minlength=n + 1)
    keep = np.flatnonzero(sizes >= min_size)
    keep = keep[keep > 0]
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[keep] = np.arange(1, keep.size + 1)
    labels = remap[raw]
    if keep.size == 0:
        return ClusterMap(labels)
    idx = np.arange(1, keep.size + 1)
    vs, us = np.indices(labels.shape)
    cu = ndimage.mean(us, labels, idx)
    cv = ndimage.mean(vs, labels, idx)
    centroids = [(float(u), float(v)) for u, v in zip(np.atleast_1d(cu), np.atleast_1d(cv))]
    return ClusterMap(labels, centroids, [int(s) for s in sizes[keep]])


def distance_component(clusters: ClusterMap, pixels_per_mm: float = 1.0) -> np.ndarray:
    """Inward distance transform of the cluster pixels.

    Each cluster pixel gets the Euclidean distance to the nearest pixel
    outside its cluster (pixels beyond the grid border count as outside),
    divided by ``pixels_per_mm``. With the default scale the unit is pixels.
    Zero off the clusters; values peak in cluster interiors.
    """
    inside = np.asarray(clusters.labels) > 0
    padded = np.pad(inside, 1)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    return np.where(inside, dist / pixels_per_mm, 0.0)


def compose_labels(l_std: np.ndarray, l_dist: np.ndarray, fg_mask: np.ndarray,
                   cfg: LabelConfig | None = None) -> QualityMap:
    """Weighted sum of flatness and centrality on the foreground, zero elsewhere.

    ``l_dist`` is rescaled to [0, 1] by its per-image maximum first.
    """
    cfg = cfg or LabelConfig()
    l_std = np.nan_to_num(np.asarray(l_std, dtype=np.float64), nan=0.0)
    l_dist = np.asarray(l_dist, dtype=np.float64)
    fg = np.asarray(fg_mask, dtype=bool)
    if not (l_std.shape == l_dist.shape == fg.shape):
        raise ValueError("l_std, l_dist and fg_mask must have the same shape")
    peak = l_dist.max() if l_dist.size else 0.0
    dist_n = l_dist / peak if peak > 0 else np.zeros_like(l_dist)
    lab = cfg.w_std * np.clip(l_std, 0.0, 1.0) + cfg.w_dist * np.clip(dist_n, 0.0, 1.0)
    lab = np.where(fg, np.clip(lab, 0.0, 1.0), 0.0)
    return QualityMap(lab, QualitySource.ANALYTIC)


@dataclass
class LabelResult:
    labels: QualityMap
    l_std: np.ndarray
    l_dist: np.ndarray        # unnormalized, in mm
    clusters: ClusterMap
    fg_mask: np.ndarray


def generate_labels(normal_std: np.ndarray, fg_mask: np.ndarray,
                    cfg: LabelConfig | None = None) -> LabelResult:
    """Full labeling chain from a normal-spread map and a foreground mask."""
    cfg = cfg or LabelConfig()
    fg = np.asarray(fg_mask, dtype=bool)
    l_std = np.where(np.isfinite(normal_std), 1.0 - np.nan_to_num(normal_std, nan=1.0), 0.0)
    clusters = cluster_graspable(l_std, fg, cfg.graspable_threshold, cfg.min_cluster_size)
    l_dist = distance_component(clusters, cfg.pixels_per_mm)
    labels = compose_labels(l_std, l_dist, fg, cfg)
    return LabelResult(labels, l_std, l_dist, clusters, fg)
