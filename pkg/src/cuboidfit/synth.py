"""Synthetic cuboid scenes: random boxes, visible-surface samples and depth renders."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Cuboid, cuboids_overlap, ray_box_local, rotvec_to_matrix
from .io import DepthMap, Intrinsics, backproject


@dataclass(frozen=True)
class SynthRanges:
    """Parameter ranges for :func:`random_cuboid`.

    ``axis`` selects how rotation axes are drawn: ``"octant"`` normalises a
    vector with U(0, 1) components, ``"sphere"`` is uniform on the sphere.
    """

    size: tuple[float, float] = (0.01, 2.0)
    x: tuple[float, float] = (-5.0, 5.0)
    y: tuple[float, float] = (-5.0, 5.0)
    z: tuple[float, float] = (0.5, 10.0)
    angle: tuple[float, float] = (-np.pi, np.pi)
    axis: str = "octant"

    def __post_init__(self):
        for lo, hi in (self.size, self.x, self.y, self.z, self.angle):
            if lo > hi:
                raise ValueError("range bounds out of order")
        if self.size[0] <= 0:
            raise ValueError("sizes must be positive")
        if self.z[0] <= 0:
            raise ValueError("cuboids must lie in front of the camera")
        if self.axis not in ("octant", "sphere"):
            raise ValueError(f"unknown axis distribution {self.axis!r}")


def random_cuboid(ranges: SynthRanges, rng: np.random.Generator) -> Cuboid:
    size = rng.uniform(*ranges.size, size=3)
    t = np.array([rng.uniform(*ranges.x), rng.uniform(*ranges.y), rng.uniform(*ranges.z)])
    if ranges.axis == "octant":
        axis = rng.random(3)
    else:
        axis = rng.normal(size=3)
    axis /= max(np.linalg.norm(axis), 1e-12)
    angle = rng.uniform(*ranges.angle)
    return Cuboid(size, rotvec_to_matrix(axis * angle), t)


def visible_faces(h: Cuboid) -> tuple[np.ndarray, np.ndarray]:
    """Camera-facing faces (0-based) and their area * cos(incidence) weights.

    The incidence angle is taken at the face centre.
    """
    cam = h.camera_local()
    a = h.size
    faces, weights = [], []
    areas = h.face_areas
    for f in range(6):
        c, s = f // 2, (1.0 if f % 2 == 0 else -1.0)
        height = s * cam[c] - a[c]
        if height <= 0:
            continue
        centre = np.zeros(3)
        centre[c] = s * a[c]
        cos = height / np.linalg.norm(cam - centre)
        faces.append(f)
        weights.append(areas[f] * cos)
    return np.array(faces, dtype=int), np.array(weights)


def first_hits(cuboids: Sequence[Cuboid], directions) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit parameter along rays from the origin, and the cuboid index hit.

    Misses give ``inf`` and index ``-1``.
    """
    d = np.asarray(directions, dtype=float)
    best = np.full(d.shape[:-1], np.inf)
    label = np.full(d.shape[:-1], -1, dtype=int)
    for k, h in enumerate(cuboids):
        s = ray_box_local(h.camera_local(), d @ h.rotation, h.size)
        closer = ~np.isnan(s) & (s < best)
        best = np.where(closer, s, best)
        label = np.where(closer, k, label)
    return best, label


def sample_visible_points(h: Cuboid, n: int, rng: np.random.Generator,
                          occluders: Sequence[Cuboid] = (), return_faces: bool = False):
    """Points on the camera-facing faces of ``h`` seen from the origin.

    Faces are drawn with probability proportional to area times the cosine of
    the incidence angle, points uniformly within a face. Each sample is
    confirmed by casting the camera ray and rejected if something (``h``
    itself or one of ``occluders``) is hit first.
    """
    if h.contains(np.zeros(3)):
        raise ValueError("camera lies inside the cuboid")
    faces, weights = visible_faces(h)
    if len(faces) == 0:
        raise ValueError("no face of the cuboid faces the camera")
    p = weights / weights.sum()
    a = h.size
    out = np.empty((0, 3))
    out_faces = np.empty(0, dtype=int)
    everything = [h, *occluders]
    for _ in range(1000):
        if len(out) >= n:
            break
        m = n - len(out)
        f = faces[rng.choice(len(faces), size=m, p=p)]
        local = (rng.random((m, 3)) * 2.0 - 1.0) * a
        axis = f // 2
        local[np.arange(m), axis] = np.where(f % 2 == 0, 1.0, -1.0) * a[axis]
        world = h.to_world(local)
        hit, _ = first_hits(everything, world)
        ok = hit >= 1.0 - 1e-9
        out = np.concatenate([out, world[ok]])
        out_faces = np.concatenate([out_faces, f[ok]])
    if len(out) < n:
        raise RuntimeError("could not place enough unoccluded samples")
    return (out, out_faces) if return_faces else out


def render_labels(cuboids: Sequence[Cuboid], K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Z-depth (``nan`` where nothing is hit) and per-pixel cuboid index (-1 for none)."""
    depth, label = first_hits(cuboids, K.rays())
    depth = np.where(np.isfinite(depth) & (depth > 0), depth, np.nan)
    return depth, np.where(np.isnan(depth), -1, label)


def render_depth(cuboids: Sequence[Cuboid], K: Intrinsics) -> DepthMap:
    """Ray-cast depth map: z of the nearest hit per pixel centre, ``nan`` if none."""
    return DepthMap(render_labels(cuboids, K)[0])


@dataclass(frozen=True)
class Scene:
    cuboids: list
    depth: DepthMap
    intrinsics: Intrinsics
    points: np.ndarray
    pixel_index: np.ndarray
    labels: np.ndarray  # cuboid index of every point

    @property
    def diameter(self) -> float:
        """Bounding-box diagonal of the observed points."""
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


def make_scene(k: int, rng: np.random.Generator, K: Intrinsics | None = None,
               ranges: SynthRanges | None = None, depth_noise: float = 0.0,
               min_fraction: float = 0.01, max_attempts: int = 1000) -> Scene:
    """Render ``k`` random, non-overlapping cuboids that are all visible.

    Candidates are redrawn when they contain the camera, intersect an earlier
    cuboid, or leave any cuboid with fewer than ``min_fraction`` of the valid
    pixels. ``depth_noise`` adds zero-mean Gaussian noise (metres) to the
    rendered depth.
    """
    if k < 1:
        raise ValueError("need at least one cuboid")
    K = K or Intrinsics.default()
    ranges = ranges or SynthRanges()
    cuboids: list[Cuboid] = []
    for _ in range(k):
        for _attempt in range(max_attempts):
            h = random_cuboid(ranges, rng)
            if h.contains(np.zeros(3), tol=1e-3):
                continue
            if any(cuboids_overlap(h, g) for g in cuboids):
                continue
            trial = cuboids + [h]
            _, label = render_labels(trial, K)
            counts = np.bincount(label[label >= 0], minlength=len(trial))
            if counts.min() >= max(1.0, min_fraction * counts.sum()):
                cuboids = trial
                break
        else:
            raise RuntimeError(f"no valid cuboid placement after {max_attempts} attempts")
    depth, label = render_labels(cuboids, K)
    if depth_noise > 0:
        depth = depth + rng.normal(0.0, depth_noise, size=depth.shape)
    dm = DepthMap(depth)
    pts, index = backproject(dm, K)
    return Scene(cuboids, dm, K, pts, index, label.ravel()[index])
