"""Readers and writers for the on-disk grid formats.

Float grids use single-channel Portable Float Maps. Rows are stored
top-to-bottom (the first row in the file is image row 0), little-endian,
scale field -1.0. Integer grids and footprint patterns are PGM files.
Small metadata files are plain ``key = value`` text.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image


class FormatError(ValueError):
    """Raised when a file does not follow the expected layout."""


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel PFM file into a float64 array of shape (h, w)."""
    with open(path, "rb") as fh:
        data = fh.read()
    # header: "Pf" <ws> width <ws> height <ws> scale <single ws>
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if kind != b"Pf":
        raise FormatError(f"{path}: only single-channel PFM (Pf) is supported")
    endian = "<" if scale < 0 else ">"
    payload = data[m.end():]
    n = w * h
    if len(payload) < 4 * n:
        raise FormatError(f"{path}: truncated payload ({len(payload)} bytes, need {4 * n})")
    arr = np.frombuffer(payload[: 4 * n], dtype=endian + "f4").reshape(h, w)
    return arr.astype(np.float64)


def write_pfm(path: str | os.PathLike, grid: np.ndarray) -> None:
    """Write a 2-D grid as little-endian single-channel PFM (rows top-to-bottom)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"PFM grids must be 2-D, got shape {grid.shape}")
    h, w = grid.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    _atomic_write(path, header + np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read an 8- or 16-bit PGM as an integer array (values unscaled)."""
    with Image.open(path) as img:
        if img.mode not in ("L", "I", "I;16", "I;16B"):
            raise FormatError(f"{path}: expected a grayscale PGM, got mode {img.mode}")
        arr = np.array(img)
    return arr.astype(np.int64)


def pgm_maxval(path: str | os.PathLike) -> int:
    with open(path, "rb") as fh:
        head = fh.read(64)
    m = re.match(rb"P5\s+(?:#.*\s+)*(\d+)\s+(\d+)\s+(\d+)\s", head)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM file")
    return int(m.group(3))


def write_pgm(path: str | os.PathLike, grid: np.ndarray) -> None:
    """Write non-negative integers as PGM; 8-bit when they fit, else 16-bit."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"PGM grids must be 2-D, got shape {grid.shape}")
    if grid.size and (grid.min() < 0 or grid.max() > 65535):
        raise ValueError("PGM values must lie in [0, 65535]")
    dtype = np.uint8 if (grid.size == 0 or grid.max() <= 255) else np.uint16
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".pgm")
    os.close(fd)
    try:
        Image.fromarray(grid.astype(dtype)).save(tmp, format="PPM")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def read_intensity(path: str | os.PathLike) -> np.ndarray:
    """Load an 8- or 16-bit PGM intensity image normalized to [0, 1]."""
    raw = read_pgm(path)
    return raw.astype(np.float64) / pgm_maxval(path)


def write_intensity(path: str | os.PathLike, intensity: np.ndarray) -> None:
    q = np.round(np.clip(intensity, 0.0, 1.0) * 255.0).astype(np.uint8)
    write_pgm(path, q)


def read_keyvalue(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_keyvalue(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in values.items())
    _atomic_write(path, text.encode())


def read_depth(path: str | os.PathLike) -> np.ndarray:
    """Load a metric depth grid in meters.

    PFM files hold meters directly. A 16-bit PGM needs a sidecar named
    ``<file>.meta`` (or ``<stem>.meta``) containing ``depth_scale`` in meters
    per unit; zero-valued PGM pixels are invalid and become NaN.
    """
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    sidecars = [path.with_name(path.name + ".meta"), path.with_suffix(".meta")]
    meta = next((p for p in sidecars if p.exists()), None)
    if meta is None:
        raise FormatError(f"{path}: PGM depth needs a sidecar with depth_scale "
                          f"(looked for {', '.join(str(p) for p in sidecars)})")
    kv = read_keyvalue(meta)
    if "depth_scale" not in kv:
        raise FormatError(f"{meta}: missing depth_scale")
    scale = float(kv["depth_scale"])
    raw = read_pgm(path).astype(np.float64)
    depth = raw * scale
    depth[raw <= 0] = np.nan
    return depth


def _atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write(path, text.encode())
