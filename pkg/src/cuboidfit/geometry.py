"""Cuboid geometry in the camera frame.

Conventions
-----------
* The camera centre is the origin and looks along ``+z``.
* A cuboid is ``(size, R, t)`` where ``size`` holds the three *half*-extents.
  A camera-frame point ``y`` maps into the cuboid frame as ``R.T @ (y - t)``.
* Sides are numbered 1..6 in the order ``+x, -x, +y, -y, +z, -z`` of the
  cuboid frame.

Every distance returned here is in metres and unsquared. Functions accept a
single point of shape ``(3,)`` or a batch of shape ``(N, 3)`` and return a
scalar or an ``(N,)`` array accordingly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

SIDES = ("+x", "-x", "+y", "-y", "+z", "-z")
# absolute tolerance (m) for "the line of sight hits the face rectangle"
ON_SURFACE_TOL = 1e-9


def rotvec_to_matrix(r) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(r, dtype=float)).as_matrix()


def matrix_to_rotvec(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


@dataclass(frozen=True, eq=False)
class Cuboid:
    """Oriented cuboid with half-extents ``size`` and camera-frame pose."""

    size: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        size = np.asarray(self.size, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.any(size <= 0) or not np.all(np.isfinite(size)):
            raise ValueError(f"half-extents must be positive and finite, got {size}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be a proper orthonormal matrix")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        for name, value in (("size", size), ("rotation", R), ("translation", t)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_axis_angle(cls, size, rotvec, translation) -> "Cuboid":
        return cls(size, rotvec_to_matrix(rotvec), translation)

    @property
    def axis_angle(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    @property
    def diameter(self) -> float:
        """Length of the space diagonal."""
        return float(2.0 * np.linalg.norm(self.size))

    @property
    def face_areas(self) -> np.ndarray:
        ax, ay, az = self.size
        yz, xz, xy = 4 * ay * az, 4 * ax * az, 4 * ax * ay
        return np.array([yz, yz, xz, xz, xy, xy])

    def to_local(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.translation) @ self.rotation

    def to_world(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def camera_local(self) -> np.ndarray:
        """Camera centre expressed in the cuboid frame."""
        return -(self.translation @ self.rotation)

    def contains(self, y, tol: float = 0.0) -> np.ndarray:
        return np.all(np.abs(self.to_local(y)) <= self.size + tol, axis=-1)

    def corners(self) -> np.ndarray:
        """The 8 corners, ordered by the sign pattern of ``(x, y, z)`` (x slowest)."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.to_world(signs * self.size)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples over the whole surface, in the camera frame."""
        return self.to_world(sample_faces_local(self.size, n, rng)[0])

    def to_dict(self) -> dict:
        return {
            "size": [float(v) for v in self.size],
            "rotation_axis_angle": [float(v) for v in self.axis_angle],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cuboid":
        return cls.from_axis_angle(d["size"], d["rotation_axis_angle"], d["translation"])

    def __repr__(self):
        s = np.array2string(self.size, precision=4)
        r = np.array2string(self.axis_angle, precision=4)
        t = np.array2string(self.translation, precision=4)
        return f"Cuboid(size={s}, axis_angle={r}, translation={t})"


class Ray(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray

    @classmethod
    def make(cls, origin, direction) -> "Ray":
        d = np.asarray(direction, dtype=float)
        return cls(np.asarray(origin, dtype=float), d / np.linalg.norm(d))


def sample_faces_local(size, n: int, rng: np.random.Generator, weights=None):
    """Sample ``n`` points on the faces of a box centred at the origin.

    Faces are picked with probability proportional to ``weights`` (area by
    default), points are uniform within a face. Returns ``(points, face)``
    with ``face`` being 0-based side indices.
    """
    a = np.asarray(size, dtype=float)
    if weights is None:
        ax, ay, az = a
        weights = np.repeat([ay * az, ax * az, ax * ay], 2)
    weights = np.asarray(weights, dtype=float)
    face = rng.choice(6, size=n, p=weights / weights.sum())
    pts = (rng.random((n, 3)) * 2.0 - 1.0) * a
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * a[axis]
    return pts, face


def _as_points(y):
    y = np.asarray(y, dtype=float)
    return y.reshape(-1, 3), y.ndim == 1


def _squeeze(values, single):
    return values[0] if single else values


# ---------------------------------------------------------------------------
# distances


def _surface_distance_sq_local(p, a):
    q = np.abs(p) - a
    inner = np.maximum(np.min(-q, axis=-1), 0.0)
    outer = np.maximum(q, 0.0)
    return inner**2 + np.sum(outer**2, axis=-1)


def side_distances_sq_local(p, a) -> np.ndarray:
    """Squared distances of cuboid-frame points ``p`` (N, 3) to the 6 faces."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    excess_sq = np.maximum(np.abs(p) - a, 0.0) ** 2
    out = np.empty(p.shape[:-1] + (6,))
    for s in range(6):
        c = s // 2
        plane = a[c] if s % 2 == 0 else -a[c]
        out[..., s] = (p[..., c] - plane) ** 2 + excess_sq.sum(axis=-1) - excess_sq[..., c]
    return out


def point_to_cuboid_distance(h: Cuboid, y):
    """Euclidean distance from ``y`` to the surface of ``h`` (0 on the surface)."""
    p, single = _as_points(y)
    return _squeeze(np.sqrt(_surface_distance_sq_local(h.to_local(p), h.size)), single)


def point_to_side_distance(h: Cuboid, y, side: int):
    """Distance from ``y`` to the closed rectangular face ``side`` (1..6)."""
    if side not in range(1, 7):
        raise ValueError(f"side must be in 1..6, got {side}")
    p, single = _as_points(y)
    d2 = side_distances_sq_local(h.to_local(p), h.size)[:, side - 1]
    return _squeeze(np.sqrt(d2), single)


def occlusion_mask_local(p, a, cam) -> np.ndarray:
    """``(N, 6)`` boolean matrix: does face ``s`` cut the segment from ``p`` to ``cam``?

    The segment is ``p + lam * (cam - p)`` with ``0 < lam <= 1``; a point
    within ``ON_SURFACE_TOL`` of the face plane is not occluded by it, and a
    segment parallel to a face plane never hits it.
    """
    p = np.asarray(p, dtype=float)
    v = cam - p
    out = np.zeros(p.shape[:-1] + (6,), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(6):
            c = s // 2
            plane = a[c] if s % 2 == 0 else -a[c]
            lam = (plane - p[..., c]) / v[..., c]
            off_plane = np.abs(plane - p[..., c]) > ON_SURFACE_TOL
            hit = off_plane & (v[..., c] != 0) & (lam > 0) & (lam <= 1)
            for j in range(3):
                if j == c:
                    continue
                xj = p[..., j] + lam * v[..., j]
                hit &= np.abs(xj) <= a[j] + ON_SURFACE_TOL
            out[..., s] = hit
    return out


def occludes(h: Cuboid, y, side: int):
    """True if face ``side`` (1..6) of ``h`` blocks the line of sight of ``y``."""
    if side not in range(1, 7):
        raise ValueError(f"side must be in 1..6, got {side}")
    p, single = _as_points(y)
    mask = occlusion_mask_local(h.to_local(p), h.size, h.camera_local())[:, side - 1]
    return _squeeze(mask, single)


def occlusion_distance(cuboids: Sequence[Cuboid], y):
    """Distance to the farthest face that occludes ``y`` (0 if unoccluded)."""
    p, single = _as_points(y)
    out = np.zeros(len(p))
    for h in cuboids:
        local = h.to_local(p)
        occ = occlusion_mask_local(local, h.size, h.camera_local())
        d2 = side_distances_sq_local(local, h.size)
        out = np.maximum(out, np.sqrt(np.max(np.where(occ, d2, 0.0), axis=1)))
    return _squeeze(out, single)


def occlusion_aware_distance(cuboids: Sequence[Cuboid], y):
    """``max(min_h d(h, y), d_o(M, y))``; ``inf`` for an empty cuboid set."""
    p, single = _as_points(y)
    if len(cuboids) == 0:
        return _squeeze(np.full(len(p), np.inf), single)
    nearest = np.min([point_to_cuboid_distance(h, p) for h in cuboids], axis=0)
    return _squeeze(np.maximum(nearest, occlusion_distance(cuboids, p)), single)


# ---------------------------------------------------------------------------
# rays


def ray_box_local(origins, directions, a):
    """Slab test against the box ``|x| <= a``; returns entry parameters (nan = miss).

    ``directions`` need not be normalised; the returned parameter is in units
    of the given direction vectors. A ray starting inside the box reports 0.
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(directions, dtype=float)
    o, d = np.broadcast_arrays(o, d)
    t_near = np.full(o.shape[:-1], -np.inf)
    t_far = np.full(o.shape[:-1], np.inf)
    miss = np.zeros(o.shape[:-1], dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for c in range(3):
            dc, oc = d[..., c], o[..., c]
            parallel = dc == 0
            miss |= parallel & (np.abs(oc) > a[c])
            t1 = (-a[c] - oc) / dc
            t2 = (a[c] - oc) / dc
            lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
            hi = np.where(parallel, np.inf, np.maximum(t1, t2))
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
    miss |= (t_near > t_far) | (t_far < 0)
    return np.where(miss, np.nan, np.maximum(t_near, 0.0))


def ray_cuboid_intersect(h: Cuboid, ray: Ray) -> float | None:
    """Smallest ``s >= 0`` with ``origin + s * direction`` on or inside ``h``."""
    o = h.to_local(ray.origin)
    d = np.asarray(ray.direction, dtype=float) @ h.rotation
    s = float(ray_box_local(o, d, h.size))
    return None if np.isnan(s) else s


def ray_cuboid_hits(h: Cuboid, origins, directions) -> np.ndarray:
    """Batched :func:`ray_cuboid_intersect`; misses are ``nan``."""
    o = h.to_local(origins)
    d = np.asarray(directions, dtype=float) @ h.rotation
    return ray_box_local(o, d, h.size)


# ---------------------------------------------------------------------------
# comparison


def canonical_surface_discrepancy(h1: Cuboid, h2: Cuboid, n: int = 10_000, seed=0) -> float:
    """Symmetric mean surface-to-surface distance between two cuboids.

    Invariant under the 24 rotational symmetries and axis relabellings of a
    cuboid, unlike any comparison of raw parameters.
    """
    if n < 100:
        raise ValueError("need at least 100 surface samples")
    rng = np.random.default_rng(seed)
    s1 = h1.sample_surface(n, rng)
    s2 = h2.sample_surface(n, rng)
    forward = point_to_cuboid_distance(h2, s1).mean()
    backward = point_to_cuboid_distance(h1, s2).mean()
    return float(0.5 * (forward + backward))


def cuboids_overlap(h1: Cuboid, h2: Cuboid, margin: float = 0.0) -> bool:
    """Separating-axis test for two oriented boxes, each grown by ``margin``."""
    A, B = h1.rotation, h2.rotation
    axes = [A[:, i] for i in range(3)] + [B[:, j] for j in range(3)]
    axes += [np.cross(A[:, i], B[:, j]) for i in range(3) for j in range(3)]
    d = h2.translation - h1.translation
    a1, a2 = h1.size + margin, h2.size + margin
    for axis in axes:
        n = np.linalg.norm(axis)
        if n < 1e-9:
            continue
        axis = axis / n
        r1 = np.sum(a1 * np.abs(axis @ A))
        r2 = np.sum(a2 * np.abs(axis @ B))
        if abs(d @ axis) > r1 + r2:
            return False
    return True
