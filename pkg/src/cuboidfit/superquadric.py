"""Occlusion-aware distances for superquadric (superellipsoid) scene abstractions.

There is no closed-form point-to-superquadric distance, so the surface is
represented by samples: each primitive is sampled on an angular grid drawn
uniformly in ``(eta, omega)``, samples facing away from the camera are
discarded, and distances go to the nearest remaining sample. Occlusion is
decided by sign changes of the inside-outside function along the line of
sight. The poses use the same convention as cuboids: a camera-frame point
``y`` maps into the primitive frame as ``R.T @ (y - t)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import matrix_to_rotvec, rotvec_to_matrix

# |f| below this counts as "on the surface" and carries no sign
SIGN_TOL = 1e-9


@dataclass(frozen=True)
class Superquadric:
    eps: tuple
    size: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        e = tuple(float(v) for v in self.eps)
        if len(e) != 2 or not all(0 < v <= 2 for v in e):
            raise ValueError(f"shape exponents must lie in (0, 2], got {e}")
        a = np.asarray(self.size, dtype=float).reshape(3)
        if np.any(a <= 0):
            raise ValueError("half-extents must be positive")
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "eps", e)
        object.__setattr__(self, "size", a)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_axis_angle(cls, eps, size, rotvec, translation) -> "Superquadric":
        return cls(tuple(eps), size, rotvec_to_matrix(rotvec), translation)

    def to_local(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.translation) @ self.rotation

    def to_world(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "eps": list(self.eps),
            "size": [float(v) for v in self.size],
            "rotation_axis_angle": [float(v) for v in matrix_to_rotvec(self.rotation)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Superquadric":
        return cls.from_axis_angle(d["eps"], d["size"], d["rotation_axis_angle"], d["translation"])


def _spow(x, e):
    return np.sign(x) * np.abs(x) ** e


def inside_outside_local(p, eps, a) -> np.ndarray:
    e1, e2 = eps
    x = np.abs(p[..., 0] / a[0])
    y = np.abs(p[..., 1] / a[1])
    z = np.abs(p[..., 2] / a[2])
    with np.errstate(over="ignore"):
        xy = (x ** (2.0 / e2) + y ** (2.0 / e2)) ** (e2 / e1)
        return xy + z ** (2.0 / e1) - 1.0


def sq_inside_outside(s: Superquadric, y):
    """0 on the surface, negative inside, positive outside."""
    return inside_outside_local(s.to_local(y), s.eps, s.size)


def sample_local(s: Superquadric, n: int, rng: np.random.Generator):
    """Surface points and unit outward normals in the primitive frame."""
    e1, e2 = s.eps
    a = s.size
    eta = rng.uniform(-np.pi / 2, np.pi / 2, n)
    omega = rng.uniform(-np.pi, np.pi, n)
    ce, se = np.cos(eta), np.sin(eta)
    cw, sw = np.cos(omega), np.sin(omega)
    p = np.stack([a[0] * _spow(ce, e1) * _spow(cw, e2),
                  a[1] * _spow(ce, e1) * _spow(sw, e2),
                  a[2] * _spow(se, e1)], axis=-1)
    nrm = np.stack([_spow(ce, 2 - e1) * _spow(cw, 2 - e2) / a[0],
                    _spow(ce, 2 - e1) * _spow(sw, 2 - e2) / a[1],
                    _spow(se, 2 - e1) / a[2]], axis=-1)
    length = np.linalg.norm(nrm, axis=-1, keepdims=True)
    nrm = np.divide(nrm, length, out=np.zeros_like(nrm), where=length > 0)
    return p, nrm


def sq_sample_surface(s: Superquadric, n: int, rng: np.random.Generator):
    """``n`` surface points and outward unit normals, in the camera frame."""
    if n < 1:
        raise ValueError("need at least one sample")
    p, nrm = sample_local(s, n, rng)
    return s.to_world(p), nrm @ s.rotation.T


def visible_samples(s: Superquadric, n: int, rng: np.random.Generator) -> np.ndarray:
    """Camera-frame samples that are not on the far side of the primitive.

    A sample is discarded when its normal points away from the camera while
    the camera is outside; with the camera inside, everything is kept.
    """
    p, nrm = sample_local(s, n, rng)
    cam = s.to_local(np.zeros(3))
    if inside_outside_local(cam, s.eps, s.size) > 0:
        keep = np.sum((p - cam) * nrm, axis=-1) <= 0
        p = p[keep]
    return s.to_world(p)


def sq_occludes(s: Superquadric, y, L: int = 64):
    """Does the line of sight of ``y`` cross the surface of ``s``?

    ``L`` points ``k / L * y`` (k = 1..L) are tested; a sign change of the
    inside-outside function means the primitive is in the way. Values within
    ``SIGN_TOL`` of zero are treated as on the surface and ignored.
    """
    if L < 16:
        raise ValueError("need at least 16 line-of-sight samples")
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = y.reshape(-1, 3)
    lam = np.arange(1, L + 1) / L
    out = np.empty(len(pts), dtype=bool)
    for lo in range(0, len(pts), 4096):
        chunk = pts[lo:lo + 4096]
        f = inside_outside_local(s.to_local(chunk[:, None, :] * lam[None, :, None]), s.eps, s.size)
        sign = np.where(np.abs(f) <= SIGN_TOL, 0, np.sign(f))
        out[lo:lo + 4096] = np.any(sign > 0, axis=1) & np.any(sign < 0, axis=1)
    return bool(out[0]) if single else out


def sq_distance(s: Superquadric, y, n_surface: int = 10_000, rng=None) -> np.ndarray:
    """Distance to the nearest visible sample of ``s`` (``inf`` if none is visible)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    pts = np.asarray(y, dtype=float).reshape(-1, 3)
    vis = visible_samples(s, n_surface, rng)
    if len(vis) == 0:
        return np.full(len(pts), np.inf)
    return cKDTree(vis).query(pts)[0]


def sq_oa_distance(S: Sequence[Superquadric], y, n_surface: int = 10_000, L: int = 64, seed=0):
    """Sampled occlusion-aware distance of ``y`` to a superquadric set.

    ``max(min_s d_sq(s, y), max over occluding s of d_sq(s, y))``; ``inf``
    for an empty set. A primitive without visible samples contributes
    nothing.
    """
    if n_surface < 1000:
        raise ValueError("need at least 1000 surface samples")
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = y.reshape(-1, 3)
    nearest = np.full(len(pts), np.inf)
    occluded = np.zeros(len(pts))
    rng = np.random.default_rng(seed)
    for s in S:
        d = sq_distance(s, pts, n_surface, rng)
        nearest = np.minimum(nearest, d)
        occ = sq_occludes(s, pts, L) & np.isfinite(d)
        occluded = np.where(occ, np.maximum(occluded, d), occluded)
    out = np.maximum(nearest, occluded)
    return float(out[0]) if single else out
