"""From footprint matches to ranked 6-DoF grasp candidates."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import formats
from .footprint import KernelStack, MatchMaps
from .geometry import GeometryMaps
from .labeling import ClusterMap

MIN_SELECT_RADIUS = 3.0


@dataclass
class GraspCandidate:
    pixel: tuple[int, int]            # (u, v)
    position: np.ndarray              # (x, y, z) meters, camera frame
    approach: np.ndarray              # unit vector, tool moves along it: minus the surface normal
    yaw: float                        # degrees about the approach axis
    gripper_type: int
    footprint_id: str
    score: float
    cluster_id: int = 0

    @property
    def rotation(self) -> np.ndarray:
        return grasp_rotation(self.approach, self.yaw)

    def to_record(self) -> dict:
        u, v = self.pixel
        x, y, z = (float(c) for c in self.position)
        return {
            "u": int(u), "v": int(v),
            "x": x, "y": y, "z": z,
            "approach": [float(c) for c in self.approach],
            "yaw_deg": float(self.yaw),
            "footprint": self.footprint_id,
            "gripper_type": int(self.gripper_type),
            "score": float(self.score),
            "cluster_id": int(self.cluster_id),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GraspCandidate":
        return cls((int(rec["u"]), int(rec["v"])), np.array([rec["x"], rec["y"], rec["z"]]),
                   np.array(rec["approach"], dtype=np.float64), float(rec["yaw_deg"]),
                   int(rec["gripper_type"]), str(rec["footprint"]), float(rec["score"]),
                   int(rec.get("cluster_id", 0)))


@dataclass
class GraspList:
    grasps: list
    scene_id: str = ""
    config_hash: str = ""
    timings: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.grasps)

    def __iter__(self):
        return iter(self.grasps)


class InvalidPixelError(ValueError):
    pass


def grasp_rotation(approach: np.ndarray, yaw_deg: float) -> np.ndarray:
    """Gripper orientation: columns are the gripper x, y, z axes in camera frame.

    The gripper z axis is aligned with ``approach`` by the smallest rotation
    taking the camera z axis onto it; the frame is then turned by ``yaw``
    about that axis. On a surface facing the camera squarely, yaw 0 leaves
    the gripper x axis on the camera x axis.
    """
    a = np.asarray(approach, dtype=np.float64)
    a = a / np.linalg.norm(a)
    c = a[2]
    if c < -1.0 + 1e-12:
        align = np.diag([1.0, -1.0, -1.0])   # half turn about x
    else:
        vx, vy = -a[1], a[0]                 # e_z x a
        k = 1.0 / (1.0 + c)
        align = np.array([[1 - k * vy * vy, k * vx * vy, vy],
                          [k * vx * vy, 1 - k * vx * vx, -vx],
                          [-vy, vx, c]])
    t = math.radians(yaw_deg)
    cz, sz = math.cos(t), math.sin(t)
    spin = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return align @ spin


def selection_radius(size: int) -> float:
    """Half the equivalent-circle radius of a cluster, at least three pixels."""
    return max(MIN_SELECT_RADIUS, 0.5 * math.sqrt(size / math.pi))


def select_pixels(q, match: MatchMaps, clusters: ClusterMap, radius: Optional[float] = None,
                  split_area: Optional[int] = None) -> list[tuple[tuple[int, int], int]]:
    """Pick the pixel with the highest ``o_q`` near each cluster centre.

    Candidates are the cluster's pixels within ``radius`` of its centroid
    (default :func:`selection_radius`); ties go to the first pixel in
    row-major order. Clusters whose candidates all score zero are skipped.
    With ``split_area`` set, a cluster of ``n * split_area`` pixels or more
    yields up to ``n`` picks; later picks keep clear of earlier ones by
    twice the radius and may lie anywhere in the cluster.
    """
    o_q = np.asarray(match.o_q, dtype=np.float64)
    labels = clusters.labels
    out = []
    slices = ndimage.find_objects(labels)
    for k, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        members = labels[sl] == k
        size = clusters.sizes[k - 1]
        cu, cv = clusters.centroids[k - 1]
        r = selection_radius(size) if radius is None else float(radius)
        vv, uu = np.mgrid[sl[0], sl[1]]
        d2 = (uu - cu) ** 2 + (vv - cv) ** 2
        region = members & (d2 <= r * r)
        if not region.any():
            # centroid outside a non-convex cluster: take the member ring nearest to it
            region = members & (d2 <= d2[members].min() + 1e-9)
        scores = np.where(region, o_q[sl], -np.inf)
        flat = int(np.argmax(scores))
        if not scores.flat[flat] > 0:
            continue
        picks = [(int(uu.flat[flat]), int(vv.flat[flat]))]
        if split_area:
            extra = size // split_area - 1
            rest = members.copy()
            for _ in range(max(extra, 0)):
                for pu, pv in picks:
                    rest &= (uu - pu) ** 2 + (vv - pv) ** 2 > (2 * r) ** 2
                s = np.where(rest, o_q[sl], -np.inf)
                f = int(np.argmax(s))
                if not s.flat[f] > 0:
                    break
                picks.append((int(uu.flat[f]), int(vv.flat[f])))
        out.extend((p, k) for p in picks)
    return out


def pixel_to_pose(pixel: tuple[int, int], geo: GeometryMaps, match: MatchMaps,
                  kernel: KernelStack, cluster_id: int = 0) -> GraspCandidate:
    """Grasp at pixel ``(u, v)``: point cloud position, minus-normal approach, matched yaw."""
    u, v = int(pixel[0]), int(pixel[1])
    h, w = geo.valid_mask.shape
    if not (0 <= u < w and 0 <= v < h) or not geo.valid_mask[v, u]:
        raise InvalidPixelError(f"pixel (u={u}, v={v}) has no valid point/normal")
    position = geo.points[v, u].copy()
    approach = -geo.normals[v, u]
    approach = approach / np.linalg.norm(approach)
    f = int(match.o_footprint[v, u])
    return GraspCandidate((u, v), position, approach, float(match.o_rot[v, u]),
                          int(match.o_type[v, u]), kernel.footprints[f].name,
                          float(match.o_q[v, u]), cluster_id)


def rank_grasps(candidates: Sequence[GraspCandidate], max_grasps: int = 20) -> GraspList:
    """Best score first, ties by cluster id then row-major pixel; keep ``max_grasps``."""
    ordered = sorted(candidates, key=lambda g: (-g.score, g.cluster_id, g.pixel[1], g.pixel[0]))
    return GraspList(list(ordered[:max_grasps]))


# ---------------------------------------------------------------- records

TEXT_COLUMNS = ("u", "v", "x", "y", "z", "approach_x", "approach_y", "approach_z",
                "yaw_deg", "footprint", "gripper_type", "score")


def write_grasps(grasps: GraspList, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<scene>.grasps.jsonl`` and ``<scene>.grasps.txt``.

    The JSON-lines file starts with a header object; every following line
    is one grasp. Neither file contains timings, so identical inputs give
    identical bytes.
    """
    out_dir = Path(out_dir)
    stem = grasps.scene_id or "scene"
    header = {"scene_id": grasps.scene_id, "config_hash": grasps.config_hash,
              "n_grasps": len(grasps)}
    lines = [json.dumps(header)] + [json.dumps(g.to_record()) for g in grasps]
    jsonl = out_dir / f"{stem}.grasps.jsonl"
    formats.atomic_write_text(jsonl, "\n".join(lines) + "\n")

    rows = [f"# scene_id: {grasps.scene_id}", f"# config_hash: {grasps.config_hash}",
            "# units: pixels, meters, unit vector, degrees",
            "# " + " ".join(TEXT_COLUMNS)]
    for g in grasps:
        r = g.to_record()
        rows.append(" ".join([str(r["u"]), str(r["v"]), repr(r["x"]), repr(r["y"]), repr(r["z"]),
                              *(repr(a) for a in r["approach"]), repr(r["yaw_deg"]),
                              r["footprint"], str(r["gripper_type"]), repr(r["score"])]))
    txt = out_dir / f"{stem}.grasps.txt"
    formats.atomic_write_text(txt, "\n".join(rows) + "\n")
    return jsonl, txt


def read_grasps(path: str | os.PathLike) -> GraspList:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise formats.FormatError(f"{path}: empty grasp file")
    header = json.loads(lines[0])
    if "scene_id" not in header:
        raise formats.FormatError(f"{path}: missing header line")
    grasps = [GraspCandidate.from_record(json.loads(ln)) for ln in lines[1:]]
    return GraspList(grasps, header["scene_id"], header.get("config_hash", ""))
