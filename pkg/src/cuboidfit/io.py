"""Depth maps, camera intrinsics, weight maps and result files."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Cuboid

MAX_DEPTH = 1e4


class DepthFormatError(ValueError):
    """A depth or weight file could not be parsed."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; pixel centres sit at integer ``(u, v)``."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx <= self.width - 1 and 0 <= self.cy <= self.height - 1):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls, width: int = 640, height: int = 480) -> "Intrinsics":
        """Kinect-like focal length with a centred principal point."""
        return cls(525.0, 525.0, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def rays(self) -> np.ndarray:
        """Per-pixel ray directions with unit z, shape ``(height, width, 3)``."""
        u = (np.arange(self.width) - self.cx) / self.fx
        v = (np.arange(self.height) - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)

    def project(self, points) -> np.ndarray:
        """Continuous pixel coordinates ``(u, v)`` of camera-frame points."""
        p = np.asarray(points, dtype=float)
        return np.stack([self.fx * p[..., 0] / p[..., 2] + self.cx,
                         self.fy * p[..., 1] / p[..., 2] + self.cy], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        except KeyError as exc:
            raise ValueError(f"intrinsics missing field {exc}") from None


@dataclass(frozen=True)
class DepthMap:
    """Metric z-depth, row-major ``(height, width)``; NaN, inf, <= 0 and >= 1e4 are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("depth values must be a 2-D array")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        v = self.values
        with np.errstate(invalid="ignore"):
            return np.isfinite(v) & (v > 0) & (v < MAX_DEPTH)

    def check(self, K: Intrinsics):
        if (self.width, self.height) != (K.width, K.height):
            raise ValueError(
                f"depth is {self.width}x{self.height} but intrinsics are {K.width}x{K.height}")


def backproject(depth: DepthMap, K: Intrinsics):
    """Camera-frame points of all valid pixels, plus their flat pixel indices."""
    depth.check(K)
    valid = depth.valid.ravel()
    index = np.flatnonzero(valid)
    z = depth.values.ravel()[index]
    v, u = np.divmod(index, depth.width)
    pts = np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)
    return pts, index


# ---------------------------------------------------------------------------
# depth files


def _read_token(buf: bytes, pos: int):
    while pos < len(buf) and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DepthFormatError(f"truncated PFM header at byte offset {start}")
    return buf[start:pos].decode("ascii", errors="replace"), pos


def read_pfm(path) -> np.ndarray:
    """Single-channel PFM as a ``(height, width)`` float32 array, top row first."""
    buf = Path(path).read_bytes()
    pos = 0
    magic, pos = _read_token(buf, pos)
    if magic != "Pf":
        raise DepthFormatError(f"expected 'Pf' magic at byte offset 0, found {magic!r}")
    try:
        w, pos = _read_token(buf, pos)
        h, pos = _read_token(buf, pos)
        scale, pos = _read_token(buf, pos)
        width, height, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        if isinstance(exc, DepthFormatError):
            raise
        raise DepthFormatError(f"malformed PFM header before byte offset {pos}") from None
    if width < 1 or height < 1 or scale == 0:
        raise DepthFormatError("invalid PFM dimensions or scale")
    pos += 1  # single whitespace byte ends the header
    expected = 4 * width * height
    if len(buf) - pos < expected:
        raise DepthFormatError(
            f"truncated PFM: {expected} data bytes expected from byte offset {pos}, "
            f"file ends at byte offset {len(buf)}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width)[::-1].astype(np.float32)


def write_pfm(path, values):
    v = np.asarray(values, dtype="<f4")
    height, width = v.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(v[::-1]).tobytes())


def read_depth_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DepthFormatError("empty CSV depth file")
    try:
        width, height = (int(x) for x in lines[0].split(","))
        rows = [[float(x) for x in line.split(",")] for line in lines[1:] if line.strip()]
    except ValueError as exc:
        raise DepthFormatError(f"malformed CSV depth file: {exc}") from None
    arr = np.array(rows, dtype=float)
    if arr.shape != (height, width):
        raise DepthFormatError(f"CSV header says {width}x{height}, data is {arr.shape[::-1]}")
    return arr


def write_depth_csv(path, values):
    v = np.asarray(values, dtype=float)
    out = [f"{v.shape[1]},{v.shape[0]}"]
    out += [",".join(repr(float(x)) for x in row) for row in v]
    Path(path).write_text("\n".join(out) + "\n")


def _format_of(path, fmt):
    if fmt is not None:
        return fmt.lower()
    return "csv" if str(path).lower().endswith(".csv") else "pfm"


def load_depth(path, fmt: str | None = None) -> DepthMap:
    """Read a depth map; the format is taken from the extension unless given."""
    fmt = _format_of(path, fmt)
    if fmt == "pfm":
        return DepthMap(read_pfm(path))
    if fmt == "csv":
        return DepthMap(read_depth_csv(path))
    raise ValueError(f"unknown depth format {fmt!r}")


def save_depth(path, depth: DepthMap, fmt: str | None = None):
    fmt = _format_of(path, fmt)
    if fmt == "pfm":
        write_pfm(path, depth.values)
    elif fmt == "csv":
        write_depth_csv(path, depth.values)
    else:
        raise ValueError(f"unknown depth format {fmt!r}")


def load_intrinsics(path) -> Intrinsics:
    return Intrinsics.from_dict(json.loads(Path(path).read_text()))


def save_intrinsics(path, K: Intrinsics):
    Path(path).write_text(canonical_json(K.to_dict()))


# ---------------------------------------------------------------------------
# weight maps
#
# Binary layout (little-endian): b"CFWM", uint32 Q, uint32 rows, uint32 cols,
# float64 q[Q], float32 maps[Q][rows][cols]. rows x cols is either the image
# size, the image size divided by 8 (rounded up), or 1 x N for per-point maps.

_WEIGHT_MAGIC = b"CFWM"
_WEIGHT_HEADER = struct.Struct("<4sIII")


def save_weight_maps(path, maps, q):
    maps = np.asarray(maps, dtype="<f4")
    if maps.ndim == 2:
        maps = maps[:, None, :]
    Q, rows, cols = maps.shape
    q = np.asarray(q, dtype="<f8").reshape(Q)
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_HEADER.pack(_WEIGHT_MAGIC, Q, rows, cols))
        fh.write(q.tobytes())
        fh.write(maps.tobytes())


def load_weight_maps(path, n_points: int, pixel_index=None, image_shape=None):
    """Read sampling weight maps and express them per scene point.

    Image-shaped maps (full or 1/8 resolution) need ``pixel_index`` (flat
    pixel of each point) and ``image_shape`` ``(height, width)``; coarse maps
    are upsampled by nearest neighbour, i.e. each cell covers an 8x8 block.
    """
    from .robust import WeightMaps

    buf = Path(path).read_bytes()
    if len(buf) < _WEIGHT_HEADER.size:
        raise DepthFormatError(f"truncated weight file at byte offset {len(buf)}")
    magic, Q, rows, cols = _WEIGHT_HEADER.unpack_from(buf, 0)
    if magic != _WEIGHT_MAGIC:
        raise DepthFormatError("not a weight-map file (bad magic at byte offset 0)")
    off = _WEIGHT_HEADER.size
    need = off + 8 * Q + 4 * Q * rows * cols
    if len(buf) < need:
        raise DepthFormatError(f"truncated weight file: {need} bytes expected, {len(buf)} found")
    q = np.frombuffer(buf, "<f8", Q, off).astype(float)
    maps = np.frombuffer(buf, "<f4", Q * rows * cols, off + 8 * Q).astype(float).reshape(Q, rows, cols)
    if np.any(maps < 0) or np.any(q < 0):
        raise ValueError("weights must be nonnegative")
    if q.sum() <= 0:
        raise ValueError("selection weights sum to zero")
    q = q / q.sum()

    if rows == 1 and cols == n_points:
        per_point = maps[:, 0, :]
    else:
        if image_shape is None or pixel_index is None:
            raise ValueError(f"weight maps of shape {rows}x{cols} need the pixel layout")
        h, w = image_shape
        pixel_index = np.asarray(pixel_index)
        if len(pixel_index) != n_points:
            raise ValueError("pixel index does not match the number of points")
        v, u = np.divmod(pixel_index, w)
        if (rows, cols) == (h, w):
            per_point = maps[:, v, u]
        elif (rows, cols) == (-(-h // 8), -(-w // 8)):
            per_point = maps[:, v // 8, u // 8]
        else:
            raise ValueError(
                f"weight maps are {rows}x{cols}; expected {h}x{w}, "
                f"{-(-h // 8)}x{-(-w // 8)} or 1x{n_points}")
    return WeightMaps(per_point, q)


# ---------------------------------------------------------------------------
# results


def _canon(obj, digits):
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + _canon(v, digits) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_canon(v, digits) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        if digits is None:
            return repr(x)
        s = format(x, f".{digits}g")
        return "0" if s == "-0" else s
    if obj is None:
        return "null"
    return json.dumps(obj)


def canonical_json(obj, digits: int | None = 9) -> str:
    """Deterministic JSON: sorted keys, no whitespace, floats at ``digits``
    significant digits (``None`` for shortest round-trip repr).

    Non-finite floats become ``null``.
    """
    return _canon(obj, digits) + "\n"


def primitives_to_dict(primitives: Sequence) -> dict:
    from .superquadric import Superquadric

    if primitives and isinstance(primitives[0], Superquadric):
        return {"superquadrics": [s.to_dict() for s in primitives]}
    return {"cuboids": [h.to_dict() for h in primitives]}


def save_primitives(path, primitives: Sequence):
    Path(path).write_text(canonical_json(primitives_to_dict(primitives)))


def load_primitives(path, family: str | None = None):
    """Read cuboids or superquadrics; returns ``(family, primitives)``."""
    from .superquadric import Superquadric

    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        data = {(family or "cuboid") + "s": data}
    if "superquadrics" in data and family in (None, "superquadric"):
        return "superquadric", [Superquadric.from_dict(d) for d in data["superquadrics"]]
    if "cuboids" in data and family in (None, "cuboid"):
        return "cuboid", [Cuboid.from_dict(d) for d in data["cuboids"]]
    raise ValueError(f"no {family or 'primitive'} list found in {path}")


def obj_faces() -> np.ndarray:
    """Triangles over :meth:`Cuboid.corners` with outward (counter-clockwise) winding."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    tris = []
    for axis in range(3):
        for s in (1.0, -1.0):
            idx = np.flatnonzero(signs[:, axis] == s)
            u, v = [c for c in range(3) if c != axis]
            ang = np.arctan2(signs[idx, v], signs[idx, u])
            quad = idx[np.argsort(ang)]
            normal = np.zeros(3)
            normal[axis] = s
            e1 = signs[quad[1]] - signs[quad[0]]
            e2 = signs[quad[2]] - signs[quad[0]]
            if np.dot(np.cross(e1, e2), normal) < 0:
                quad = quad[::-1]
            tris += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    return np.array(tris, dtype=int)


def export_obj(cuboids: Sequence[Cuboid], path):
    faces = obj_faces()
    lines = ["# cuboid abstraction"]
    for k, h in enumerate(cuboids):
        lines.append(f"o cuboid_{k}")
        lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in h.corners()]
        lines += [f"f {a + 1 + 8 * k} {b + 1 + 8 * k} {c + 1 + 8 * k}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def save_pgm(path, mask):
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((m.astype(np.uint8) * 255).tobytes())
