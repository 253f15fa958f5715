"""Scene-level evaluation of a primitive abstraction against a depth map."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import Cuboid, ray_box_local
from .io import DepthMap, Intrinsics, backproject, canonical_json
from .superquadric import Superquadric, inside_outside_local, sq_oa_distance

DEFAULT_BOUNDS = (0.20, 0.05)


def _is_sq(M) -> bool:
    return len(M) > 0 and isinstance(M[0], Superquadric)


def oa_distances(Y, M: Sequence) -> np.ndarray:
    """Occlusion-aware distance of every point; ``inf`` for an empty model."""
    Y = np.ascontiguousarray(Y, dtype=float).reshape(-1, 3)
    if _is_sq(M):
        return sq_oa_distance(M, Y)
    return kernels.oa_distances(Y, M)


def auc(distances, bound: float) -> float:
    """Area under the recall curve on ``[0, bound]`` as a percentage.

    With recall(t) the fraction of distances ``<= t``, the integral is exactly
    ``sum(max(bound - d, 0)) / n`` for piecewise-constant recall.
    """
    if not bound > 0:
        raise ValueError("bound must be positive")
    d = np.asarray(distances, dtype=float).ravel()
    if len(d) == 0:
        return 0.0
    with np.errstate(invalid="ignore"):
        area = np.where(np.isfinite(d), np.maximum(bound - d, 0.0), 0.0)
    return float(100.0 * area.sum() / (len(d) * bound))


def _sq_ray_hits(s: Superquadric, rays, samples: int = 256) -> np.ndarray:
    # march the part of each ray inside the bounding sphere and look for f <= 0
    d = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    c = s.translation
    r = float(np.linalg.norm(s.size))
    proj = d @ c
    disc = proj**2 - (c @ c - r * r)
    hit = np.zeros(d.shape[:-1], dtype=bool)
    cand = np.flatnonzero((disc >= 0).ravel() & ((proj + np.sqrt(np.maximum(disc, 0))) >= 0).ravel())
    flat = d.reshape(-1, 3)
    lam = np.linspace(0.0, 1.0, samples)
    for lo in range(0, len(cand), 2048):
        idx = cand[lo:lo + 2048]
        dd = flat[idx]
        pr = proj.ravel()[idx]
        root = np.sqrt(disc.ravel()[idx])
        s0 = np.maximum(pr - root, 0.0)
        s1 = pr + root
        dist = s0[:, None] + (s1 - s0)[:, None] * lam[None, :]
        pts = dd[:, None, :] * dist[..., None]
        f = inside_outside_local(s.to_local(pts), s.eps, s.size)
        hit.reshape(-1)[idx] = np.any(f <= 0, axis=1)
    return hit


def coverage(depth: DepthMap, K: Intrinsics, M: Sequence):
    """Percentage of valid-depth pixels whose camera ray hits a primitive, and the mask.

    Rays pass through pixel centres. Superquadric hits are found by marching
    the inside-outside function inside the bounding sphere.
    """
    depth.check(K)
    rays = K.rays()
    mask = np.zeros((K.height, K.width), dtype=bool)
    for h in M:
        if isinstance(h, Superquadric):
            mask |= _sq_ray_hits(h, rays)
        else:
            mask |= ~np.isnan(ray_box_local(h.camera_local(), rays @ h.rotation, h.size))
    valid = depth.valid
    n_valid = int(valid.sum())
    percent = 100.0 * float((mask & valid).sum()) / n_valid if n_valid else 0.0
    return percent, mask


def covered_mean(distances, mask) -> float:
    """Mean distance over the covered entries; 0 when nothing is covered."""
    d = np.asarray(distances, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if d.shape != m.shape:
        raise ValueError("mask must align with distances")
    return float(d[m].mean()) if m.any() else 0.0


@dataclass(frozen=True)
class EvalReport:
    num_primitives: int
    coverage_percent: float
    mean_oa_all: float
    mean_oa_covered: float
    auc: dict = field(default_factory=dict)
    num_points: int = 0
    num_covered: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["auc"] = {repr(float(b)): v for b, v in self.auc.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["auc"] = {float(b): float(v) for b, v in d["auc"].items()}
        for key in ("coverage_percent", "mean_oa_all", "mean_oa_covered"):
            d[key] = float("inf") if d[key] is None else float(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return canonical_json(self.to_dict(), digits=None)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def evaluate(depth: DepthMap, K: Intrinsics, M: Sequence, bounds=DEFAULT_BOUNDS) -> EvalReport:
    """Coverage, mean occlusion-aware distances and AUCs of ``M`` for one frame.

    For an empty model the mean over all points is ``inf``.
    """
    Y, pixel = backproject(depth, K)
    dist = oa_distances(Y, M)
    percent, mask = coverage(depth, K, M)
    covered = mask.ravel()[pixel]
    mean_all = float(dist.mean()) if len(M) and len(dist) else float("inf")
    return EvalReport(
        num_primitives=len(M),
        coverage_percent=percent,
        mean_oa_all=mean_all,
        mean_oa_covered=covered_mean(dist, covered),
        auc={float(b): auc(dist, b) for b in bounds},
        num_points=int(len(Y)),
        num_covered=int(covered.sum()),
    )
