"""Gripper footprints, rotated kernel stacks and footprint matching.

Every footprint is rotated in fixed steps and all (footprint, rotation)
pairs become channels of one kernel stack. Matching correlates the quality
map with every channel, penalizes footprints whose support covers
differently oriented surfaces (spread of the normals under the footprint)
and reduces the channels to the best gripper, rotation and score per pixel.

Correlation convention: ``out[v, u] = sum_ij k[i, j] * img[v + i - c, u + j - c]``
with ``c`` the kernel centre and zero outside the image. A kernel offset
``(du, dv)`` thus reads the pixel at that offset from the anchor.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import fft, ndimage

from . import formats

# FFT round-off floor for accumulated quality; values below are exact zeros
QUALITY_FLOOR = 1e-12
# footprint areas with less valid-normal weight than this get zero spread
WEIGHT_FLOOR = 1e-9
# FFT round-off in the weighted variance numerator; below it the spread is
# exactly zero (the square root would otherwise lift 1e-14 noise to 1e-7)
SPREAD_FLOOR = 1e-12


@dataclass
class Footprint:
    name: str
    gripper_type: int
    pattern: np.ndarray
    pixels_per_mm: float

    def __post_init__(self):
        self.pattern = np.asarray(self.pattern, dtype=np.float64)
        if self.pattern.ndim != 2:
            raise ValueError(f"{self.name}: pattern must be 2-D")
        h, w = self.pattern.shape
        if h % 2 == 0 or w % 2 == 0:
            raise ValueError(f"{self.name}: pattern dimensions must be odd, got {h}x{w}")
        if self.pattern.min() < 0 or self.pattern.max() > 1:
            raise ValueError(f"{self.name}: pattern values must lie in [0, 1]")
        if not (self.pattern > 0).any():
            raise ValueError(f"{self.name}: pattern has no contact area")
        if self.pixels_per_mm <= 0:
            raise ValueError(f"{self.name}: pixels_per_mm must be positive")

    @property
    def cup_count(self) -> int:
        """Number of separate contact regions (suction cups) in the pattern."""
        _, n = ndimage.label(self.pattern > 0, structure=np.ones((3, 3)))
        return n


def cup_footprint(name: str, gripper_type: int, cup_centers_mm: Sequence[tuple[float, float]],
                  cup_diameter_mm: float, pixels_per_mm: float) -> Footprint:
    """Rasterize circular cups (centres in mm, x right / y down) around the anchor."""
    r_px = 0.5 * cup_diameter_mm * pixels_per_mm
    centres = np.asarray(cup_centers_mm, dtype=np.float64).reshape(-1, 2) * pixels_per_mm
    half = int(math.ceil(np.max(np.abs(centres)) + r_px)) if len(centres) else 0
    half = max(half, int(math.ceil(r_px)))
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    pattern = np.zeros(xs.shape)
    for cx, cy in centres:
        pattern[(xs - cx) ** 2 + (ys - cy) ** 2 <= r_px ** 2] = 1.0
    return Footprint(name, gripper_type, pattern, pixels_per_mm)


def default_footprints(pixels_per_mm: float = 2.0, cup_diameter_mm: float = 10.0,
                       cup_spacing_mm: float = 14.0) -> list[Footprint]:
    """Two grippers with two activation patterns each.

    Gripper 0 is a linear three-cup gripper (centre cup only, or all three);
    gripper 1 is a square four-cup gripper (one pair, or all four).
    """
    s, d = cup_spacing_mm, cup_diameter_mm
    return [
        cup_footprint("linear-1", 0, [(0.0, 0.0)], d, pixels_per_mm),
        cup_footprint("linear-3", 0, [(-s, 0.0), (0.0, 0.0), (s, 0.0)], d, pixels_per_mm),
        cup_footprint("block-2", 1, [(-s / 2, 0.0), (s / 2, 0.0)], d, pixels_per_mm),
        cup_footprint("block-4", 1, [(-s / 2, -s / 2), (s / 2, -s / 2),
                                     (-s / 2, s / 2), (s / 2, s / 2)], d, pixels_per_mm),
    ]


def load_footprint(pgm_path: str | os.PathLike) -> Footprint:
    """Read an 8-bit PGM pattern (255 = full contact) with its ``.meta`` sidecar."""
    pgm_path = Path(pgm_path)
    meta_path = pgm_path.with_suffix(".meta")
    kv = formats.read_keyvalue(meta_path)
    for key in ("name", "gripper_type", "pixels_per_mm"):
        if key not in kv:
            raise formats.FormatError(f"{meta_path}: missing {key}")
    pattern = formats.read_pgm(pgm_path) / float(formats.pgm_maxval(pgm_path))
    return Footprint(kv["name"], int(kv["gripper_type"]), pattern, float(kv["pixels_per_mm"]))


def save_footprint(fp: Footprint, pgm_path: str | os.PathLike) -> None:
    pgm_path = Path(pgm_path)
    formats.write_pgm(pgm_path, np.round(fp.pattern * 255).astype(np.int64))
    formats.write_keyvalue(pgm_path.with_suffix(".meta"), {
        "name": fp.name, "gripper_type": fp.gripper_type, "pixels_per_mm": repr(fp.pixels_per_mm)})


def load_footprint_set(path: str | os.PathLike) -> list[Footprint]:
    """A set file lists one footprint PGM per line, relative to the set file."""
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(load_footprint(path.parent / line))
    if not out:
        raise formats.FormatError(f"{path}: footprint set is empty")
    return out


def save_footprint_set(footprints: Sequence[Footprint], path: str | os.PathLike) -> None:
    path = Path(path)
    names = []
    for fp in footprints:
        fname = f"{fp.name}.pgm"
        save_footprint(fp, path.parent / fname)
        names.append(fname)
    formats.atomic_write_text(path, "".join(n + "\n" for n in names))


def _cos_sin(deg: float) -> tuple[float, float]:
    q, rem = divmod(deg, 90.0)
    if rem == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    rad = math.radians(deg)
    return math.cos(rad), math.sin(rad)


def rotate_pattern(pattern: np.ndarray, angle_deg: float, size: int) -> np.ndarray:
    """Rotate ``pattern`` about its centre pixel by ``angle_deg`` into a size x size frame.

    Positive angles turn the image x axis toward the y axis (about the
    camera z axis). Bilinear resampling, zero outside the source, clamped
    to [0, 1].
    """
    h, w = pattern.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    c = (size - 1) / 2
    cos, sin = _cos_sin(angle_deg)
    dy, dx = np.mgrid[0:size, 0:size].astype(np.float64) - c
    # inverse map: source = R(-angle) * destination offset
    sx = cos * dx + sin * dy + cx
    sy = -sin * dx + cos * dy + cy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    padded = np.pad(pattern, 1)

    def tap(yy, xx):
        inside = (yy >= -1) & (yy <= h) & (xx >= -1) & (xx <= w)
        return np.where(inside, padded[np.clip(yy + 1, 0, h + 1), np.clip(xx + 1, 0, w + 1)], 0.0)

    out = (tap(y0, x0) * (1 - fx) * (1 - fy) + tap(y0, x0 + 1) * fx * (1 - fy)
           + tap(y0 + 1, x0) * (1 - fx) * fy + tap(y0 + 1, x0 + 1) * fx * fy)
    return np.clip(out, 0.0, 1.0)


@dataclass
class KernelStack:
    channels: np.ndarray                 # (n_f * n_r, size, size), unit sum each
    rotation_step: float
    max_rotation: float
    footprints: list
    channel_index: list                  # channel -> (footprint index, angle in degrees)

    @property
    def n_footprints(self) -> int:
        return len(self.footprints)

    @property
    def n_rotations(self) -> int:
        return int(round(self.max_rotation / self.rotation_step))

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.channels.shape[1], self.channels.shape[2]

    def channel(self, footprint_index: int, rotation_index: int) -> int:
        return footprint_index * self.n_rotations + rotation_index


def build_kernel_stack(footprints: Sequence[Footprint], rotation_step: float = 5.0,
                       max_rotation: float = 180.0) -> KernelStack:
    """Stack every footprint at every rotation step into one kernel.

    Channels are ordered footprint-major: channel ``f * n_r + r`` holds
    footprint ``f`` rotated by ``r * rotation_step`` degrees.
    """
    footprints = list(footprints)
    if not footprints:
        raise ValueError("at least one footprint is required")
    scales = {fp.pixels_per_mm for fp in footprints}
    if len(scales) > 1:
        raise ValueError(f"footprints use different pixel scales: {sorted(scales)}")
    if rotation_step <= 0 or max_rotation <= 0:
        raise ValueError("rotation_step and max_rotation must be positive")
    n_r = max_rotation / rotation_step
    if abs(n_r - round(n_r)) > 1e-9:
        raise ValueError(f"rotation_step {rotation_step} does not divide max_rotation {max_rotation}")
    n_r = int(round(n_r))
    # half-diagonal of the largest pattern, plus one pixel of bilinear spread
    half = max(int(math.ceil(math.hypot((fp.pattern.shape[0] - 1) / 2,
                                        (fp.pattern.shape[1] - 1) / 2))) for fp in footprints) + 1
    size = 2 * half + 1
    channels = np.empty((len(footprints) * n_r, size, size))
    index = []
    for f, fp in enumerate(footprints):
        for r in range(n_r):
            angle = r * rotation_step
            ch = rotate_pattern(fp.pattern, angle, size)
            total = ch.sum()
            if total <= 0:
                raise ValueError(f"{fp.name}: rotation by {angle} deg lost the whole pattern")
            channels[f * n_r + r] = ch / total
            index.append((f, angle))
    return KernelStack(channels, float(rotation_step), float(max_rotation), footprints, index)


# ---------------------------------------------------------------- correlation

def _fft_shape(image_shape, kernel_shape) -> tuple[int, int]:
    return (fft.next_fast_len(image_shape[0] + kernel_shape[0] - 1, real=True),
            fft.next_fast_len(image_shape[1] + kernel_shape[1] - 1, real=True))


class _Correlator:
    """FFT cross-correlation of fixed images with many kernels of one size."""

    def __init__(self, images: np.ndarray, kernel_shape: tuple[int, int], workers: int = 1):
        images = np.asarray(images, dtype=np.float64)
        self.h, self.w = images.shape[-2:]
        self.kh, self.kw = kernel_shape
        self.shape = _fft_shape((self.h, self.w), kernel_shape)
        self.workers = workers
        self.spectra = fft.rfft2(images, self.shape, workers=workers)

    def kernel_spectra(self, kernels: np.ndarray) -> np.ndarray:
        return fft.rfft2(kernels[..., ::-1, ::-1], self.shape, workers=self.workers)

    def correlate(self, image_index, kspec: np.ndarray) -> np.ndarray:
        """Correlate image ``image_index`` with kernels given by their spectra."""
        full = fft.irfft2(self.spectra[image_index] * kspec, self.shape, workers=self.workers)
        oy, ox = (self.kh - 1) // 2, (self.kw - 1) // 2
        return full[..., oy:oy + self.h, ox:ox + self.w]


def correlate2d(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size zero-padded cross-correlation of one image with one or more kernels."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dimensions must be odd")
    corr = _Correlator(np.asarray(image, dtype=np.float64), (kh, kw))
    return corr.correlate(Ellipsis, corr.kernel_spectra(kernel))


def _quality_values(q) -> np.ndarray:
    return np.asarray(getattr(q, "values", q), dtype=np.float64)


def convolve_quality(q, kernel: KernelStack) -> np.ndarray:
    """Accumulated footprint quality ``F * Q`` for every channel, shape (C, h, w)."""
    values = _quality_values(q)
    out = correlate2d(values, kernel.channels)
    return _clean_quality(out)


def _clean_quality(acc: np.ndarray) -> np.ndarray:
    acc = np.clip(acc, 0.0, 1.0)
    acc[acc < QUALITY_FLOOR] = 0.0
    return acc


def reference_normal(normals: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Per-component median of the valid normals, used to centre the moments."""
    if not valid.any():
        return np.array([0.0, 0.0, -1.0])
    return np.median(normals[valid], axis=0)


def _normal_moment_images(normals: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Images whose correlations give the footprint normal moments.

    Returns (5, h, w): valid weight, centred components (x, y, z) and the
    centred squared norm, all zero at invalid pixels.
    """
    ref = reference_normal(normals, valid)
    d = np.where(valid[..., None], normals - ref, 0.0)
    w = valid.astype(np.float64)
    return np.stack([w, d[..., 0], d[..., 1], d[..., 2], np.sum(d * d, axis=-1)])


def _spread_from_moments(weight, m1x, m1y, m1z, m2) -> np.ndarray:
    light = weight <= WEIGHT_FLOOR
    inv = np.where(light, 1.0, weight)
    np.reciprocal(inv, out=inv)
    sq = m1x * m1x
    sq += m1y * m1y
    sq += m1z * m1z
    sq *= inv
    var = m2 - sq
    var[light | (var < SPREAD_FLOOR)] = 0.0
    var *= inv
    np.sqrt(var, out=var)
    return var


def _normals_and_valid(normals, valid):
    normals = np.asarray(normals, dtype=np.float64)
    if valid is None:
        valid = np.all(np.isfinite(normals), axis=-1)
    valid = np.asarray(valid, dtype=bool) & np.all(np.isfinite(normals), axis=-1)
    return normals, valid


def footprint_normal_std(normals: np.ndarray, kernel: KernelStack,
                         valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Spread of the surface normals under each footprint channel, shape (C, h, w).

    Per channel and pixel this is the Euclidean norm of the per-component
    weighted standard deviations of the normals covered by the footprint,
    i.e. ``sqrt(sum_c |F * n_c^2 - (F * n_c)^2|)`` for unit-sum kernels.
    Pixels without a valid normal (and pixels beyond the border) carry no
    weight; the remaining weights are renormalized to sum to one.
    """
    normals, valid = _normals_and_valid(normals, valid)
    imgs = _normal_moment_images(normals, valid)
    corr = _Correlator(imgs, kernel.size)
    kspec = corr.kernel_spectra(kernel.channels)
    m = [corr.correlate(i, kspec) for i in range(5)]
    return _spread_from_moments(*m)


def feasibility(quality_stack: np.ndarray, std_stack: Optional[np.ndarray],
                epsilon: float = 0.1, use_penalty: bool = True) -> np.ndarray:
    """Grasp feasibility ``(F * Q) / (epsilon + F_std)``.

    With ``use_penalty=False`` the normal spread is ignored and the
    accumulated quality is returned as is.
    """
    quality_stack = np.asarray(quality_stack, dtype=np.float64)
    if not use_penalty:
        return quality_stack.copy()
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    std_stack = np.asarray(std_stack, dtype=np.float64)
    if std_stack.shape != quality_stack.shape:
        raise ValueError(f"stacks differ in shape: {quality_stack.shape} vs {std_stack.shape}")
    return quality_stack / (epsilon + std_stack)


@dataclass
class MatchMaps:
    o_type: np.ndarray        # gripper type id per pixel
    o_rot: np.ndarray         # rotation in degrees per pixel
    o_q: np.ndarray           # best feasibility per pixel
    o_channel: np.ndarray     # winning kernel channel per pixel
    o_footprint: np.ndarray   # winning footprint index per pixel
    raw_feasibility: Optional[np.ndarray] = field(default=None, repr=False)


def _decode(channel: np.ndarray, o_q: np.ndarray, kernel: KernelStack, raw=None) -> MatchMaps:
    fp_idx = np.array([f for f, _ in kernel.channel_index], dtype=np.int64)
    angles = np.array([a for _, a in kernel.channel_index], dtype=np.float64)
    types = np.array([fp.gripper_type for fp in kernel.footprints], dtype=np.int64)
    footprint = fp_idx[channel]
    return MatchMaps(types[footprint], angles[channel], o_q, channel, footprint, raw)


def reduce_matches(stack: np.ndarray, kernel: KernelStack, keep_raw: bool = False) -> MatchMaps:
    """Per-pixel best channel (first channel wins ties) decoded into gripper and rotation."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("feasibility stack must be non-empty with shape (C, h, w)")
    if stack.shape[0] != kernel.n_channels:
        raise ValueError(f"stack has {stack.shape[0]} channels, kernel has {kernel.n_channels}")
    channel = np.argmax(stack, axis=0)
    o_q = np.take_along_axis(stack, channel[None], axis=0)[0]
    return _decode(channel, o_q, kernel, stack if keep_raw else None)


def match_footprints(q, normals: np.ndarray, kernel: KernelStack,
                     valid: Optional[np.ndarray] = None, epsilon: float = 0.1,
                     use_penalty: bool = True, workers: int = 1, chunk: int = 4,
                     emit_raw: bool = False) -> MatchMaps:
    """Full footprint matching, streamed over channels.

    Equivalent to ``reduce_matches(feasibility(convolve_quality(...),
    footprint_normal_std(...)))`` but never holds more than ``chunk``
    channels of intermediate results. ``workers`` is passed to the FFT.
    """
    values = _quality_values(q)
    h, w = values.shape
    if use_penalty:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        normals, valid = _normals_and_valid(normals, valid)
        if normals.shape[:2] != (h, w):
            raise ValueError(f"normals {normals.shape[:2]} and quality {(h, w)} differ in size")
        imgs = np.concatenate([values[None], _normal_moment_images(normals, valid)])
    else:
        imgs = values[None]
    corr = _Correlator(imgs, kernel.size, workers=workers)
    best = np.full((h, w), -np.inf)
    best_ch = np.zeros((h, w), dtype=np.int64)
    raw = np.empty((kernel.n_channels, h, w)) if emit_raw else None
    # a channel identical to an earlier one scores the same and never wins
    # the first-index tie break, so only distinct kernels are evaluated
    first = _first_identical(kernel.channels)
    distinct = np.flatnonzero(first == np.arange(kernel.n_channels))
    for i0 in range(0, distinct.size, chunk):
        chans = distinct[i0:i0 + chunk]
        kspec = corr.kernel_spectra(kernel.channels[chans])
        score = _clean_quality(corr.correlate(0, kspec))
        if use_penalty:
            spread = _spread_from_moments(*(corr.correlate(i, kspec) for i in range(1, 6)))
            spread += epsilon
            score /= spread
        for k, c in enumerate(chans):
            better = score[k] > best
            np.copyto(best, score[k], where=better)
            best_ch[better] = c
        if raw is not None:
            raw[chans] = score
    if raw is not None:
        raw[:] = raw[first]
    return _decode(best_ch, best, kernel, raw)


def _first_identical(channels: np.ndarray) -> np.ndarray:
    """Index of the first channel bitwise equal to each channel."""
    seen: dict[bytes, int] = {}
    out = np.empty(len(channels), dtype=np.int64)
    for c, k in enumerate(channels):
        out[c] = seen.setdefault(np.ascontiguousarray(k).tobytes(), c)
    return out
