"""Pipeline configuration: one flat set of tunables with defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .labeling import LabelConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Every tunable of the detect/label pipeline.

    Attributes
    ----------
    max_hole_radius : int
        Largest depth hole (pixels) filled by the median filler.
    outlier_window, outlier_z : int, float
        Window and MAD multiple of the depth outlier filter.
    normal_window : int
        Window of the local plane fit for normals.
    std_window : int
        Window of the normal-spread map; about one cup diameter.
    sigma_max : float
        Normal spread that maps to zero flatness.
    bg_depth_delta : float
        Depth-subtraction threshold (m) for the background mask.
    w_std, w_dist : float
        Label weights of the flatness and centrality terms.
    graspable_threshold : float
        Flatness needed for a pixel to join a graspable cluster.
    min_cluster_size : int
        Smaller clusters are discarded (pixels).
    pixels_per_mm : float
        Image scale on the bin floor; also the footprint scale.
    quality_threshold : float
        Quality needed to join a grasp-selection cluster.
    rotation_step, max_rotation : float
        Footprint rotation sampling, degrees.
    epsilon : float
        Regularizer of the normal-spread penalty.
    use_penalty : bool
        Divide by the footprint normal spread (off: raw accumulated quality).
    max_grasps : int
        Grasps kept per scene.
    split_area : int or None
        Allow extra grasps on clusters of this many pixels per grasp.
    footprints : str or None
        Footprint set file; None uses the built-in grippers.
    intrinsics : str or None
        Intrinsics file overriding the one in a scene directory.
    strict_quality : bool
        Reject external quality maps with values outside [0, 1].
    """

    max_hole_radius: int = 5
    outlier_window: int = 5
    outlier_z: float = 3.0
    normal_window: int = 7
    std_window: int = 21
    sigma_max: float = 0.5
    bg_depth_delta: float = 0.01
    w_std: float = 0.5
    w_dist: float = 0.5
    graspable_threshold: float = 0.8
    min_cluster_size: int = 100
    pixels_per_mm: float = 2.0
    quality_threshold: float = 0.5
    rotation_step: float = 5.0
    max_rotation: float = 180.0
    epsilon: float = 0.1
    use_penalty: bool = True
    max_grasps: int = 20
    split_area: Optional[int] = None
    footprints: Optional[str] = None
    intrinsics: Optional[str] = None
    strict_quality: bool = True

    def __post_init__(self):
        for name in ("max_hole_radius", "outlier_window", "normal_window", "std_window",
                     "min_cluster_size", "max_grasps"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("outlier_window", "normal_window", "std_window"):
            if int(getattr(self, name)) % 2 == 0:
                raise ConfigError(f"{name} must be odd")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 <= self.quality_threshold < 1.0:
            raise ConfigError("quality_threshold must lie in [0, 1)")
        if self.rotation_step <= 0 or self.max_rotation <= 0:
            raise ConfigError("rotation_step and max_rotation must be positive")

    def label_config(self) -> LabelConfig:
        return LabelConfig(self.w_std, self.w_dist, self.graspable_threshold,
                           self.bg_depth_delta, self.min_cluster_size, self.pixels_per_mm)

    def geometry_kwargs(self) -> dict:
        return dict(max_hole_radius=self.max_hole_radius, outlier_window=self.outlier_window,
                    outlier_z_thresh=self.outlier_z, normal_window=self.normal_window,
                    std_window=self.std_window, sigma_max=self.sigma_max)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """sha256 of the canonical JSON form; short enough to embed in outputs."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str | os.PathLike]) -> PipelineConfig:
    """Read a YAML mapping of overrides; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig()
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return PipelineConfig.from_dict(data)
