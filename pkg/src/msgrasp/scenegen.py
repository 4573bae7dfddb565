"""Synthetic bin-picking scenes built from analytic primitives.

An overhead pinhole camera looks down the +z axis onto a bin floor at
``floor_depth``. Boxes and upright cylinders rest on the floor (or on a
raised base), wedges are 90-degree roofs. Rendering is an exact per-pixel
ray cast with a z-buffer; ground truth is labeled on the noise-free depth,
sensor noise and holes are added afterwards.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import yaml
from scipy import ndimage

from .evaluation import Difficulty, SceneGroundTruth
from .geometry import CameraIntrinsics, SceneGrid, compute_geometry
from .labeling import LabelConfig, generate_labels

SHAPES = ("box", "cylinder", "wedge")


@dataclass
class Primitive:
    """One object. Lengths in meters, yaw in degrees about the camera z axis.

    box: ``size = (length, width, height)``; cylinder: ``size = (radius,
    height)``; wedge: ``size = (width across the ridge, length along it)``
    with height ``width / 2``. ``base`` lifts the object above the floor.
    """

    shape: str
    x: float
    y: float
    size: tuple
    yaw: float = 0.0
    base: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        self.size = tuple(float(s) for s in self.size)
        need = {"box": 3, "cylinder": 2, "wedge": 2}[self.shape]
        if len(self.size) != need or min(self.size) <= 0:
            raise ValueError(f"{self.shape} needs {need} positive dimensions, got {self.size}")

    @property
    def height(self) -> float:
        if self.shape == "wedge":
            return self.size[0] / 2
        return self.size[-1]

    def footprint_corners(self) -> np.ndarray:
        """(x, y) corners of the floor-plane bounding rectangle."""
        if self.shape == "cylinder":
            r = self.size[0]
            half = (r, r)
            c, s = 1.0, 0.0
        else:
            half = (self.size[0] / 2, self.size[1] / 2)
            t = math.radians(self.yaw)
            c, s = math.cos(t), math.sin(t)
        pts = []
        for a in (-1, 1):
            for b in (-1, 1):
                lx, ly = a * half[0], b * half[1]
                pts.append((self.x + c * lx - s * ly, self.y + s * lx + c * ly))
        return np.array(pts)


@dataclass
class BinSpec:
    floor_depth: float = 1.2
    size: tuple = (0.14, 0.10)
    wall_height: float = 0.05
    wall_thickness: float = 0.006

    def __post_init__(self):
        self.size = tuple(float(s) for s in self.size)


@dataclass
class PrimitiveScene:
    primitives: list
    bin: BinSpec = field(default_factory=BinSpec)
    noise: float = 1e-4
    hole_rate: float = 0.0
    seed: int = 0
    scene_id: str = "scene"
    difficulty: str = "simple"

    def __post_init__(self):
        self.primitives = [p if isinstance(p, Primitive) else Primitive(**p) for p in self.primitives]
        if isinstance(self.bin, dict):
            self.bin = BinSpec(**self.bin)
        if self.noise < 0 or not 0 <= self.hole_rate < 1:
            raise ValueError("noise must be >= 0 and hole_rate in [0, 1)")
        Difficulty(self.difficulty)
        hx, hy = self.bin.size[0] / 2, self.bin.size[1] / 2
        for i, p in enumerate(self.primitives):
            c = p.footprint_corners()
            if np.any(np.abs(c[:, 0]) > hx + 1e-12) or np.any(np.abs(c[:, 1]) > hy + 1e-12):
                raise ValueError(f"primitive {i} ({p.shape}) extends beyond the bin floor")
            if p.base + p.height >= self.bin.floor_depth:
                raise ValueError(f"primitive {i} reaches the camera")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bin"]["size"] = list(self.bin.size)
        for p in d["primitives"]:
            p["size"] = list(p["size"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PrimitiveScene":
        return cls(**d)


def default_intrinsics(width: int = 320, height: int = 240, fx: float = 2400.0) -> CameraIntrinsics:
    """Camera with about two pixels per millimetre at 1.2 m, principal point centred."""
    return CameraIntrinsics(fx, fx, (width - 1) / 2, (height - 1) / 2)


# ---------------------------------------------------------------- ray casting

def _rays(intr: CameraIntrinsics, dims):
    h, w = dims
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    rx = np.broadcast_to((u - intr.cx) / intr.fx, (h, w))
    ry = np.broadcast_to((v - intr.cy) / intr.fy, (h, w))
    return rx, ry


def _convex_hit(planes, rx, ry):
    """Entry depth and entry-plane index of rays ``t * (rx, ry, 1)`` into ``n . p <= d``."""
    t_in = np.full(rx.shape, -np.inf)
    t_out = np.full(rx.shape, np.inf)
    face = np.full(rx.shape, -1, dtype=np.int64)
    ok = np.ones(rx.shape, dtype=bool)
    for k, (n, d) in enumerate(planes):
        denom = n[0] * rx + n[1] * ry + n[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = d / denom
        enter = denom < 0
        upd = enter & (t > t_in)
        t_in = np.where(upd, t, t_in)
        face = np.where(upd, k, face)
        t_out = np.where(denom > 0, np.minimum(t_out, t), t_out)
        ok &= ~((denom == 0) & (d < 0))
    hit = ok & (t_in <= t_out) & (t_in > 0)
    return np.where(hit, t_in, np.inf), face


def _box_planes(cx, cy, yaw, lx, ly, z_top, z_bottom):
    t = math.radians(yaw)
    e1 = np.array([math.cos(t), math.sin(t), 0.0])
    e2 = np.array([-math.sin(t), math.cos(t), 0.0])
    c = np.array([cx, cy, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    return [
        (-ez, -z_top),                       # top face (seen by the camera)
        (ez, z_bottom),
        (e1, e1 @ c + lx / 2), (-e1, -(e1 @ c) + lx / 2),
        (e2, e2 @ c + ly / 2), (-e2, -(e2 @ c) + ly / 2),
    ]


def _wedge_planes(cx, cy, yaw, width, length, z_bottom):
    t = math.radians(yaw)
    e1 = np.array([math.cos(t), math.sin(t), 0.0])
    e2 = np.array([-math.sin(t), math.cos(t), 0.0])
    c = np.array([cx, cy, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    half = width / 2
    return [
        (e1 - ez, e1 @ c + half - z_bottom),    # roof face on the +e1 side
        (-e1 - ez, -(e1 @ c) + half - z_bottom),  # roof face on the -e1 side
        (ez, z_bottom),
        (e2, e2 @ c + length / 2), (-e2, -(e2 @ c) + length / 2),
    ]


def _cylinder_hit(cx, cy, radius, z_top, z_bottom, rx, ry):
    a = rx * rx + ry * ry
    b = -2.0 * (rx * cx + ry * cy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4 * a * c
    good = disc >= 0
    sq = np.sqrt(np.where(good, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(a > 0, (-b - sq) / (2 * a), -np.inf)
        t1 = np.where(a > 0, (-b + sq) / (2 * a), np.inf)
    # rays along the optical axis: inside the infinite cylinder iff c <= 0
    axis = a == 0
    good = np.where(axis, c <= 0, good)
    t_in = np.maximum(t0, z_top)
    t_out = np.minimum(t1, z_bottom)
    hit = good & (t_in <= t_out) & (t_in > 0)
    face = np.where(t0 > z_top, 1, 0)   # 0 = top disc, 1 = mantle
    return np.where(hit, t_in, np.inf), face


def _render_clean(scene: PrimitiveScene, intr: CameraIntrinsics, dims, with_objects=True):
    """Noise-free depth, instance ids and surface ids of the scene."""
    rx, ry = _rays(intr, dims)
    floor = scene.bin.floor_depth
    depth = np.full(dims, floor)
    inst = np.zeros(dims, dtype=np.int64)
    surf = np.zeros(dims, dtype=np.int64)     # 0 = floor
    next_surface = 1

    def splat(t, face, instance):
        nonlocal next_surface, depth
        closer = t < depth
        depth = np.where(closer, t, depth)
        inst[closer] = instance
        surf[closer] = next_surface + face[closer]

    hx, hy = scene.bin.size[0] / 2, scene.bin.size[1] / 2
    wt, wh = scene.bin.wall_thickness, scene.bin.wall_height
    walls = [(0.0, -(hy + wt / 2), 2 * hx + 2 * wt, wt), (0.0, hy + wt / 2, 2 * hx + 2 * wt, wt),
             (-(hx + wt / 2), 0.0, wt, 2 * hy), (hx + wt / 2, 0.0, wt, 2 * hy)]
    for wx, wy, lx, ly in walls:
        t, face = _convex_hit(_box_planes(wx, wy, 0.0, lx, ly, floor - wh, floor), rx, ry)
        splat(t, face, 0)
        next_surface += 6
    if with_objects:
        for i, p in enumerate(scene.primitives, start=1):
            bottom = floor - p.base
            if p.shape == "box":
                planes = _box_planes(p.x, p.y, p.yaw, p.size[0], p.size[1], bottom - p.size[2], bottom)
                t, face = _convex_hit(planes, rx, ry)
                n_faces = 6
            elif p.shape == "wedge":
                t, face = _convex_hit(_wedge_planes(p.x, p.y, p.yaw, p.size[0], p.size[1], bottom),
                                      rx, ry)
                n_faces = 5
            else:
                t, face = _cylinder_hit(p.x, p.y, p.size[0], bottom - p.size[1], bottom, rx, ry)
                n_faces = 2
            splat(t, face, i)
            next_surface += n_faces
    return depth, inst, surf


def _check_frustum(scene: PrimitiveScene, intr: CameraIntrinsics, dims):
    h, w = dims
    floor = scene.bin.floor_depth
    for i, p in enumerate(scene.primitives):
        corners = p.footprint_corners()
        for z in (floor - p.base, floor - p.base - p.height):
            u = intr.fx * corners[:, 0] / z + intr.cx
            v = intr.fy * corners[:, 1] / z + intr.cy
            if u.min() < 0 or v.min() < 0 or u.max() > w - 1 or v.max() > h - 1:
                raise ValueError(f"primitive {i} ({p.shape}) leaves the camera frustum")


class RenderResult(NamedTuple):
    scene: SceneGrid
    ground_truth: SceneGroundTruth
    background: np.ndarray
    clean_depth: np.ndarray
    surface_ids: np.ndarray


def render(scene: PrimitiveScene, intrinsics: Optional[CameraIntrinsics] = None,
           dims: tuple[int, int] = (240, 320), label_cfg: Optional[LabelConfig] = None,
           geometry_kwargs: Optional[dict] = None) -> RenderResult:
    """Render a scene; ``dims`` is ``(height, width)``."""
    intr = intrinsics or default_intrinsics(dims[1], dims[0])
    _check_frustum(scene, intr, dims)
    clean, inst, surf = _render_clean(scene, intr, dims)
    bg_clean, _, _ = _render_clean(scene, intr, dims, with_objects=False)

    clean_grid = SceneGrid(np.zeros(dims), clean, intr)
    geo = compute_geometry(clean_grid, preprocess=False, **(geometry_kwargs or {}))
    lab = generate_labels(geo.normal_std, inst > 0, label_cfg or LabelConfig())
    gt = SceneGroundTruth(lab.labels.values, inst, scene.scene_id, scene.difficulty)

    rng = np.random.default_rng(scene.seed)
    albedo = np.concatenate([[0.35], rng.uniform(0.45, 0.95, size=len(scene.primitives))])
    shade = np.where(np.isfinite(geo.normals[..., 2]), np.abs(np.nan_to_num(geo.normals[..., 2])), 1.0)
    intensity = np.clip(albedo[inst] * (0.6 + 0.4 * shade), 0.0, 1.0)
    depth = clean + rng.normal(0.0, scene.noise, size=dims) if scene.noise > 0 else clean.copy()
    if scene.hole_rate > 0:
        depth[rng.random(dims) < scene.hole_rate] = np.nan
    background = bg_clean + rng.normal(0.0, scene.noise, size=dims) if scene.noise > 0 else bg_clean
    return RenderResult(SceneGrid(intensity, depth, intr), gt, background, clean, surf)


# ---------------------------------------------------------------- scene builders

def edge_wrapping_scene(cup_diameter_mm: float = 10.0, cup_spacing_mm: float = 14.0,
                        floor_depth: float = 1.2, noise: float = 0.0) -> PrimitiveScene:
    """One 90-degree roof wedge under the camera, ridge along the image v axis.

    Each roof face is 1.2 cup diameters wide (projected), so a single cup
    fits on a face while the two-cup pattern (spacing wider than a face)
    only fits by putting one cup on each face. The ridge is as long as a
    face is wide: no multi-cup pattern fits on one face, and the wedge
    stays compact enough that its centre lies on the ridge.
    """
    face = 1.2 * cup_diameter_mm
    if not (cup_diameter_mm < face < cup_spacing_mm):
        raise ValueError("need cup diameter < face width < two-cup spacing")
    width = 2 * face / 1000.0
    length = face / 1000.0
    wedge = Primitive("wedge", 0.0, 0.0, (width, length), yaw=0.0)
    return PrimitiveScene([wedge], BinSpec(floor_depth=floor_depth), noise=noise,
                          scene_id="edge-wrapping", difficulty="simple")


def surface_quality(result: RenderResult, base: float = 0.6) -> np.ndarray:
    """Quality that rates every object surface by centrality alone.

    Each visible object surface gets ``base`` at its rim rising to 1 at its
    most interior pixel; everything else is 0. It ignores how surfaces meet,
    which is what a predictor blind to edges would produce.
    """
    inst = result.ground_truth.instance_ids
    surf = result.surface_ids
    q = np.zeros(surf.shape)
    for s in np.unique(surf[inst > 0]):
        region = (surf == s) & (inst > 0)
        d = ndimage.distance_transform_edt(np.pad(region, 1))[1:-1, 1:-1]
        q[region] = base + (1.0 - base) * d[region] / d.max()
    return q


def random_scene(seed: int, n_objects: int, difficulty: str = "simple",
                 bin_spec: Optional[BinSpec] = None, size_mm: tuple = (22.0, 34.0),
                 height_mm: tuple = (12.0, 30.0), gap_mm: float = 8.0, noise: float = 1e-4,
                 hole_rate: float = 0.0, shapes: Sequence[str] = ("box", "cylinder"),
                 scene_id: Optional[str] = None) -> PrimitiveScene:
    """Disjoint boxes and upright cylinders at random poses (rejection sampling)."""
    rng = np.random.default_rng(seed)
    bin_spec = bin_spec or BinSpec()
    hx, hy = bin_spec.size[0] / 2, bin_spec.size[1] / 2
    placed: list[Primitive] = []
    circles: list[tuple[float, float, float]] = []
    for _ in range(20000):
        if len(placed) == n_objects:
            break
        shape = shapes[int(rng.integers(len(shapes)))]
        a = rng.uniform(*size_mm) / 1000
        b = rng.uniform(*size_mm) / 1000
        hgt = rng.uniform(*height_mm) / 1000
        yaw = float(rng.uniform(0, 180))
        if shape == "cylinder":
            size = (a / 2, hgt)
            reach = a / 2
        elif shape == "wedge":
            size = (a, b)
            reach = math.hypot(a, b) / 2
        else:
            size = (a, b, hgt)
            reach = math.hypot(a, b) / 2
        x = rng.uniform(-hx + reach, hx - reach) if hx > reach else None
        y = rng.uniform(-hy + reach, hy - reach) if hy > reach else None
        if x is None or y is None:
            continue
        if any(math.hypot(x - cx, y - cy) < reach + r + gap_mm / 1000 for cx, cy, r in circles):
            continue
        placed.append(Primitive(shape, float(x), float(y), size, yaw=yaw if shape != "cylinder" else 0.0))
        circles.append((x, y, reach))
    if len(placed) < n_objects:
        raise ValueError(f"could only place {len(placed)} of {n_objects} objects")
    return PrimitiveScene(placed, bin_spec, noise=noise, hole_rate=hole_rate, seed=seed,
                          scene_id=scene_id or f"scene-{seed:04d}", difficulty=difficulty)


def stacked_scene(seed: int, n_stacks: int = 3, bin_spec: Optional[BinSpec] = None,
                  noise: float = 1e-4) -> PrimitiveScene:
    """Boxes resting on larger boxes, for the complex category."""
    lower = random_scene(seed, n_stacks, "complex", bin_spec, size_mm=(30.0, 40.0),
                         height_mm=(10.0, 20.0), gap_mm=10.0, noise=noise, shapes=("box",))
    rng = np.random.default_rng(seed + 7919)
    prims = list(lower.primitives)
    for p in lower.primitives:
        sx, sy = p.size[0] * rng.uniform(0.5, 0.7), p.size[1] * rng.uniform(0.5, 0.7)
        prims.append(Primitive("box", p.x, p.y, (sx, sy, rng.uniform(0.008, 0.015)),
                               yaw=p.yaw + float(rng.uniform(-10, 10)), base=p.size[2]))
    return PrimitiveScene(prims, lower.bin, noise=noise, seed=seed, scene_id=lower.scene_id,
                          difficulty="complex")


# ---------------------------------------------------------------- config files

def load_scene_config(path: str | os.PathLike) -> tuple[PrimitiveScene, dict]:
    """Read a YAML scene description; returns the scene and its camera block."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    camera = data.pop("camera", {}) or {}
    return PrimitiveScene.from_dict(data), camera


def save_scene_config(scene: PrimitiveScene, path: str | os.PathLike, camera: Optional[dict] = None) -> None:
    from .formats import atomic_write_text
    d = scene.to_dict()
    if camera:
        d["camera"] = camera
    atomic_write_text(path, yaml.safe_dump(d, sort_keys=False))


# ---------------------------------------------------------------- corpus

CORPUS_DIMS = (360, 480)
CORPUS_BIN = BinSpec(size=(0.22, 0.16))
OBJECT_COUNTS = {"simple": (3, 5), "typical": (6, 10), "complex": (3, 4)}


def corpus_scene(seed: int, difficulty: str = "simple") -> tuple[PrimitiveScene, dict]:
    """A random corpus scene and its camera block (480x360 at 2 px/mm).

    simple: 3-5 disjoint objects; typical: 6-10 disjoint objects, wedges
    included; complex: stacked boxes.
    """
    lo, hi = OBJECT_COUNTS[Difficulty(difficulty).value]
    rng = np.random.default_rng(seed)
    n = int(rng.integers(lo, hi + 1))
    sid = f"{difficulty}-{seed:04d}"
    if difficulty == "complex":
        scene = stacked_scene(seed, n, CORPUS_BIN)
        scene.scene_id = sid
    else:
        shapes = ("box", "cylinder") if difficulty == "simple" else ("box", "cylinder", "wedge")
        scene = random_scene(seed, n, difficulty, CORPUS_BIN, shapes=shapes, scene_id=sid)
    h, w = CORPUS_DIMS
    intr = default_intrinsics(w, h)
    camera = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy, "width": w, "height": h}
    return scene, camera
