"""Scene metrics against pixel-wise ground truth and Table-style reports.

Per scene: Quality (mean ground-truth quality of feasible grasps),
Success (percent of predicted grasps that are feasible), Objects (percent
of objects hit, capped at 20 objects), Multi (grasps on objects per object
hit) and whether the scene has no feasible grasp at all. A grasp is
feasible when the ground-truth quality at its pixel is non-zero.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import formats

MAX_OBJECTS = 20


class Difficulty(str, enum.Enum):
    SIMPLE = "simple"
    TYPICAL = "typical"
    COMPLEX = "complex"


@dataclass
class SceneGroundTruth:
    gt_quality: np.ndarray
    instance_ids: np.ndarray
    scene_id: str = ""
    difficulty: Difficulty = Difficulty.SIMPLE

    def __post_init__(self):
        self.gt_quality = np.asarray(self.gt_quality, dtype=np.float64)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        if self.gt_quality.shape != self.instance_ids.shape:
            raise ValueError("gt_quality and instance_ids differ in shape")
        if np.any(self.gt_quality[self.instance_ids == 0] != 0):
            raise ValueError(f"{self.scene_id}: ground-truth quality is non-zero on background")
        self.difficulty = Difficulty(self.difficulty)

    @property
    def n_objects(self) -> int:
        ids = np.unique(self.instance_ids)
        return int(np.count_nonzero(ids))


@dataclass
class SceneMetrics:
    scene_id: str
    difficulty: Difficulty
    n_grasps: int
    n_feasible: int
    quality: Optional[float]
    success: float
    objects: Optional[float]
    multi: Optional[float]

    @property
    def none(self) -> bool:
        return self.n_feasible == 0


@dataclass
class MetricsReport:
    quality: Optional[float]
    success: Optional[float]
    objects: Optional[float]
    multi: Optional[float]
    none_rate: float
    scenes: list = field(default_factory=list)


def score_scene(grasps: Iterable, gt: SceneGroundTruth) -> SceneMetrics:
    """Metrics of one scene's grasp list against its ground truth.

    ``grasps`` yields objects with a ``pixel`` (u, v) attribute or plain
    (u, v) pairs.
    """
    pixels = [tuple(getattr(g, "pixel", g)) for g in grasps]
    h, w = gt.gt_quality.shape
    quals, hits = [], []
    for u, v in pixels:
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError(f"{gt.scene_id}: grasp pixel (u={u}, v={v}) outside {w}x{h} grid")
        quals.append(gt.gt_quality[v, u])
        hits.append(int(gt.instance_ids[v, u]))
    quals = np.asarray(quals, dtype=np.float64)
    feasible = quals > 0
    n = len(pixels)
    n_feasible = int(feasible.sum())
    quality = float(quals[feasible].mean()) if n_feasible else None
    success = 100.0 * n_feasible / n if n else 0.0
    on_object = [k for k in hits if k != 0]
    distinct = len(set(on_object))
    n_obj = gt.n_objects
    objects = 100.0 * distinct / min(n_obj, MAX_OBJECTS) if n_obj else None
    multi = len(on_object) / distinct if distinct else None
    return SceneMetrics(gt.scene_id, gt.difficulty, n, n_feasible, quality, success, objects, multi)


def _mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(math.fsum(vals) / len(vals)) if vals else None


def aggregate(reports: Sequence[SceneMetrics]) -> MetricsReport:
    """Average per-scene metrics over the scenes where each is defined."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty list of scenes")
    return MetricsReport(
        quality=_mean_defined(r.quality for r in reports),
        success=_mean_defined(r.success for r in reports),
        objects=_mean_defined(r.objects for r in reports),
        multi=_mean_defined(r.multi for r in reports),
        none_rate=100.0 * sum(r.none for r in reports) / len(reports),
        scenes=reports,
    )


def _fmt(value: Optional[float], pct: bool = False, digits: int = 3) -> str:
    if value is None:
        return "-"
    return f"{value:.1f}%" if pct else f"{value:.{digits}f}"


def format_table(report: MetricsReport, by_difficulty: bool = True, method: str = "Ours") -> str:
    """Aligned plain-text table, one block per difficulty plus an overall block."""
    groups = []
    if by_difficulty:
        for d in Difficulty:
            sub = [s for s in report.scenes if s.difficulty == d]
            if sub:
                groups.append((d.value.capitalize(), aggregate(sub)))
    groups.append(("All", report))
    head = ("", "Quality", "Success", "Objects", "Multi", "None")
    blocks = []
    for title, rep in groups:
        rows = [(title,) + head[1:],
                (method, _fmt(rep.quality), _fmt(rep.success, True), _fmt(rep.objects, True),
                 _fmt(rep.multi, digits=2), _fmt(rep.none_rate, True))]
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        widths[0] = max(widths[0], 12)
        lines = []
        for r in rows:
            lines.append("  ".join([r[0].ljust(widths[0])] +
                                   [c.rjust(max(widths[i], 8)) for i, c in enumerate(r) if i > 0]))
        rule = "-" * len(lines[0])
        blocks.append("\n".join([rule, lines[0], rule, lines[1], rule]))
    return "\n\n".join(blocks) + "\n"


SCENE_COLUMNS = ("scene_id", "difficulty", "n_grasps", "n_feasible", "quality", "success",
                 "objects", "multi", "none")


def format_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCENE_COLUMNS)
    for s in report.scenes:
        writer.writerow([s.scene_id, s.difficulty.value, s.n_grasps, s.n_feasible,
                         "" if s.quality is None else repr(s.quality), repr(s.success),
                         "" if s.objects is None else repr(s.objects),
                         "" if s.multi is None else repr(s.multi), int(s.none)])
    writer.writerow(["ALL", "", sum(s.n_grasps for s in report.scenes),
                     sum(s.n_feasible for s in report.scenes),
                     "" if report.quality is None else repr(report.quality),
                     "" if report.success is None else repr(report.success),
                     "" if report.objects is None else repr(report.objects),
                     "" if report.multi is None else repr(report.multi),
                     repr(report.none_rate)])
    return buf.getvalue()


def write_report(report: MetricsReport, out_dir: str | os.PathLike, stem: str = "report") -> None:
    out_dir = Path(out_dir)
    formats.atomic_write_text(out_dir / f"{stem}.txt", format_table(report))
    formats.atomic_write_text(out_dir / f"{stem}.csv", format_csv(report))
