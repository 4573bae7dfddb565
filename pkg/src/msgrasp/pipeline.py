"""End-to-end drivers: detect, label, evaluate and generate.

A scene directory holds::

    depth.pfm         metric depth (or depth.pgm + depth.pgm.meta)
    intensity.pgm     registered intensity
    intrinsics.txt    fx, fy, cx, cy
    background.pfm    empty-bin depth (optional)
    instances.pgm     instance ids, 0 = background (ground truth, optional)
    gt_quality.pfm    ground-truth quality (optional)
    scene.yaml        scene_id, difficulty and, for rendered scenes, the description
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import formats
from .config import ConfigError, PipelineConfig
from .evaluation import MetricsReport, SceneGroundTruth, aggregate, score_scene
from .footprint import (Footprint, KernelStack, MatchMaps, build_kernel_stack,
                        default_footprints, load_footprint_set, match_footprints)
from .geometry import (CameraIntrinsics, GeometryMaps, SceneGrid, deproject, estimate_normals,
                       fill_depth_holes, normal_std_map, suppress_depth_outliers, valid_depth)
from .labeling import LabelResult, background_mask, cluster_graspable, generate_labels
from .pose import GraspList, pixel_to_pose, rank_grasps, read_grasps, select_pixels
from .quality import QualityFileError, QualityMap, QualitySource, load_quality, save_quality


class InputError(Exception):
    """Bad or missing input; the user can fix it."""


class StageError(Exception):
    """A pipeline stage failed on inputs that parsed fine."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


INPUT_ERRORS = (formats.FormatError, QualityFileError, ConfigError, FileNotFoundError,
                yaml.YAMLError)


@dataclass
class SceneInputs:
    scene: SceneGrid
    scene_id: str = "scene"
    difficulty: str = "simple"
    background: Optional[np.ndarray] = None
    instances: Optional[np.ndarray] = None
    gt_quality: Optional[np.ndarray] = None

    def ground_truth(self) -> SceneGroundTruth:
        if self.gt_quality is None or self.instances is None:
            raise InputError(f"{self.scene_id}: no ground truth (gt_quality.pfm, instances.pgm)")
        return SceneGroundTruth(self.gt_quality, self.instances, self.scene_id, self.difficulty)


# ---------------------------------------------------------------- scene directories

def _depth_path(scene_dir: Path) -> Path:
    for name in ("depth.pfm", "depth.pgm"):
        if (scene_dir / name).exists():
            return scene_dir / name
    raise InputError(f"{scene_dir}: no depth.pfm or depth.pgm")


def read_scene_meta(scene_dir: str | os.PathLike) -> dict:
    p = Path(scene_dir) / "scene.yaml"
    if not p.exists():
        return {"scene_id": Path(scene_dir).name, "difficulty": "simple"}
    meta = yaml.safe_load(p.read_text()) or {}
    meta.setdefault("scene_id", Path(scene_dir).name)
    meta.setdefault("difficulty", "simple")
    return meta


def load_scene_dir(scene_dir: str | os.PathLike,
                   intrinsics_path: Optional[str | os.PathLike] = None) -> SceneInputs:
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise InputError(f"{scene_dir}: not a scene directory")
    try:
        depth = formats.read_depth(_depth_path(scene_dir))
        intr = CameraIntrinsics.from_file(intrinsics_path or scene_dir / "intrinsics.txt")
        ipath = scene_dir / "intensity.pgm"
        intensity = formats.read_intensity(ipath) if ipath.exists() else np.zeros(depth.shape)
        meta = read_scene_meta(scene_dir)
        opt = {}
        for key, name, reader in (("background", "background.pfm", formats.read_pfm),
                                  ("instances", "instances.pgm", formats.read_pgm),
                                  ("gt_quality", "gt_quality.pfm", formats.read_pfm)):
            if (scene_dir / name).exists():
                opt[key] = reader(scene_dir / name)
        return SceneInputs(SceneGrid(intensity, depth, intr), str(meta["scene_id"]),
                           str(meta["difficulty"]), **opt)
    except INPUT_ERRORS as exc:
        raise InputError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(f"{scene_dir}: {exc}") from exc


def save_scene_dir(scene_dir: str | os.PathLike, inputs: SceneInputs,
                   description: Optional[dict] = None) -> Path:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    formats.write_pfm(scene_dir / "depth.pfm", inputs.scene.depth)
    formats.write_intensity(scene_dir / "intensity.pgm", inputs.scene.intensity)
    inputs.scene.intrinsics.to_file(scene_dir / "intrinsics.txt")
    if inputs.background is not None:
        formats.write_pfm(scene_dir / "background.pfm", inputs.background)
    if inputs.instances is not None:
        formats.write_pgm(scene_dir / "instances.pgm", inputs.instances)
    if inputs.gt_quality is not None:
        formats.write_pfm(scene_dir / "gt_quality.pfm", inputs.gt_quality)
    meta = {"scene_id": inputs.scene_id, "difficulty": inputs.difficulty}
    if description:
        meta["description"] = description
    formats.atomic_write_text(scene_dir / "scene.yaml", yaml.safe_dump(meta, sort_keys=False))
    return scene_dir


# ---------------------------------------------------------------- detect

@dataclass
class DetectResult:
    grasps: GraspList
    timings: dict
    geometry: GeometryMaps
    quality: QualityMap
    match: MatchMaps
    kernel: KernelStack


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except (InputError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.ms[name] = (time.perf_counter() - t0) * 1000.0


def load_footprints(cfg: PipelineConfig) -> list[Footprint]:
    if cfg.footprints is None:
        return default_footprints(cfg.pixels_per_mm)
    try:
        return load_footprint_set(cfg.footprints)
    except (formats.FormatError, FileNotFoundError, ValueError) as exc:
        raise InputError(f"footprints: {exc}") from exc


def analytic_quality(inputs: SceneInputs, geo: GeometryMaps, cfg: PipelineConfig) -> LabelResult:
    """Labels of the live scene; foreground from the background recording or instance ids."""
    if inputs.background is not None:
        # filter the recording like the scene so both sides see the same edges
        bg = fill_depth_holes(inputs.background, cfg.max_hole_radius)
        bg = suppress_depth_outliers(bg, cfg.outlier_window, cfg.outlier_z)
        fg = background_mask(geo.depth, bg, cfg.bg_depth_delta)
    elif inputs.instances is not None:
        fg = inputs.instances > 0
    else:
        raise InputError(f"{inputs.scene_id}: analytic quality needs background.pfm or instances.pgm")
    return generate_labels(geo.normal_std, fg & geo.valid_mask, cfg.label_config())


def detect(inputs: SceneInputs, cfg: Optional[PipelineConfig] = None,
           quality: Optional[QualityMap | np.ndarray] = None,
           footprints: Optional[Sequence[Footprint]] = None, workers: int = 1,
           emit_raw: bool = False) -> DetectResult:
    """Grasps for one scene: preprocess, geometry, quality, footprint match, pose.

    ``quality`` given means an external quality map; otherwise it is
    computed analytically from the scene.
    """
    cfg = cfg or PipelineConfig()
    timer = _Timer()
    scene = inputs.scene
    with timer.stage("preprocess"):
        depth = fill_depth_holes(scene.depth, cfg.max_hole_radius)
        depth = suppress_depth_outliers(depth, cfg.outlier_window, cfg.outlier_z)
    with timer.stage("geometry"):
        points, _ = deproject(depth, scene.intrinsics)
        normals, nvalid = estimate_normals(points, valid_depth(depth), cfg.normal_window)
        std = normal_std_map(normals, nvalid, cfg.std_window, cfg.sigma_max)
        geo = GeometryMaps(points, normals, std, nvalid, depth)
    with timer.stage("quality"):
        if quality is None:
            qmap = analytic_quality(inputs, geo, cfg).labels
        else:
            qmap = quality if isinstance(quality, QualityMap) else QualityMap(quality,
                                                                           QualitySource.EXTERNAL)
            if qmap.shape != (scene.height, scene.width):
                raise InputError(f"quality map is {qmap.shape[0]}x{qmap.shape[1]} but the scene is "
                                 f"{scene.height}x{scene.width}")
    with timer.stage("footprint"):
        fps = list(footprints) if footprints is not None else load_footprints(cfg)
        kernel = build_kernel_stack(fps, cfg.rotation_step, cfg.max_rotation)
        match = match_footprints(qmap, geo.normals, kernel, valid=geo.valid_mask,
                                 epsilon=cfg.epsilon, use_penalty=cfg.use_penalty,
                                 workers=workers, emit_raw=emit_raw)
    with timer.stage("pose"):
        q = np.where(geo.valid_mask, qmap.values, 0.0)
        clusters = cluster_graspable(q, q > 0, max(cfg.quality_threshold, 1e-12),
                                     cfg.min_cluster_size)
        picks = select_pixels(q, match, clusters, split_area=cfg.split_area)
        cands = [pixel_to_pose(p, geo, match, kernel, cid) for p, cid in picks]
        grasps = rank_grasps(cands, cfg.max_grasps)
    grasps.scene_id = inputs.scene_id
    grasps.config_hash = cfg.hash()
    grasps.timings = dict(timer.ms)
    grasps.timings["total"] = sum(timer.ms.values())
    return DetectResult(grasps, grasps.timings, geo, qmap, match, kernel)


def write_detect_outputs(result: DetectResult, out_dir: str | os.PathLike) -> list[Path]:
    """Grasp files (byte-stable) and a separate timings file."""
    from .pose import write_grasps
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl, txt = write_grasps(result.grasps, out_dir)
    tpath = out_dir / f"{result.grasps.scene_id}.timings.json"
    formats.atomic_write_text(tpath, json.dumps({"scene_id": result.grasps.scene_id,
                                                 "config_hash": result.grasps.config_hash,
                                                 "timings_ms": result.timings}, indent=2) + "\n")
    return [jsonl, txt, tpath]


def write_raw_stack(result: DetectResult, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir) / f"{result.grasps.scene_id}.feasibility.npy"
    np.save(out, result.match.raw_feasibility)
    return out


# ---------------------------------------------------------------- label

def label_scene(inputs: SceneInputs, cfg: Optional[PipelineConfig] = None) -> LabelResult:
    cfg = cfg or PipelineConfig()
    geo_scene = inputs.scene
    depth = fill_depth_holes(geo_scene.depth, cfg.max_hole_radius)
    depth = suppress_depth_outliers(depth, cfg.outlier_window, cfg.outlier_z)
    points, _ = deproject(depth, geo_scene.intrinsics)
    normals, nvalid = estimate_normals(points, valid_depth(depth), cfg.normal_window)
    std = normal_std_map(normals, nvalid, cfg.std_window, cfg.sigma_max)
    return analytic_quality(inputs, GeometryMaps(points, normals, std, nvalid, depth), cfg)


def write_labels(result: LabelResult, out_dir: str | os.PathLike, scene_id: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{scene_id}.quality.pfm"
    save_quality(path, result.labels)
    return path


# ---------------------------------------------------------------- evaluate

def evaluate_files(grasp_files: Sequence[str | os.PathLike],
                   gt_dirs: Sequence[str | os.PathLike]) -> MetricsReport:
    """Score grasp files against scene directories, matched by scene id."""
    truths: dict[str, SceneGroundTruth] = {}
    for d in gt_dirs:
        try:
            meta = read_scene_meta(d)
            gt = SceneGroundTruth(formats.read_pfm(Path(d) / "gt_quality.pfm"),
                                  formats.read_pgm(Path(d) / "instances.pgm"),
                                  str(meta["scene_id"]), meta["difficulty"])
        except INPUT_ERRORS + (ValueError,) as exc:
            raise InputError(f"{d}: {exc}") from exc
        if gt.scene_id in truths:
            raise InputError(f"duplicate ground-truth scene id {gt.scene_id}")
        truths[gt.scene_id] = gt
    preds: dict[str, GraspList] = {}
    for f in grasp_files:
        try:
            gl = read_grasps(f)
        except (formats.FormatError, FileNotFoundError, ValueError, KeyError) as exc:
            raise InputError(f"{f}: {exc}") from exc
        if gl.scene_id in preds:
            raise InputError(f"duplicate grasp file for scene id {gl.scene_id}")
        preds[gl.scene_id] = gl
    no_gt = sorted(set(preds) - set(truths))
    no_pred = sorted(set(truths) - set(preds))
    if no_gt:
        raise InputError(f"no ground truth for scene id(s): {', '.join(no_gt)}")
    if no_pred:
        raise InputError(f"no grasp file for scene id(s): {', '.join(no_pred)}")
    try:
        return aggregate([score_scene(preds[k], truths[k]) for k in sorted(truths)])
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------- generate

def render_to_dir(description, out_root: str | os.PathLike, camera: Optional[dict] = None,
                  cfg: Optional[PipelineConfig] = None) -> Path:
    """Render a scene description and write its scene directory."""
    from .scenegen import default_intrinsics, render
    cfg = cfg or PipelineConfig()
    camera = dict(camera or {})
    width = int(camera.pop("width", 320))
    height = int(camera.pop("height", 240))
    intr = (CameraIntrinsics(float(camera["fx"]), float(camera["fy"]), float(camera["cx"]),
                             float(camera["cy"])) if camera else default_intrinsics(width, height))
    res = render(description, intr, (height, width), cfg.label_config(),
                 {k: v for k, v in cfg.geometry_kwargs().items()
                  if k in ("normal_window", "std_window", "sigma_max")})
    inputs = SceneInputs(res.scene, description.scene_id, description.difficulty,
                         background=res.background, instances=res.ground_truth.instance_ids,
                         gt_quality=res.ground_truth.gt_quality)
    desc = description.to_dict()
    desc["camera"] = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                      "width": width, "height": height}
    return save_scene_dir(Path(out_root) / description.scene_id, inputs, desc)
