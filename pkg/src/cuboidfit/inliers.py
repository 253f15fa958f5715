"""Soft inlier scoring with occlusion penalties.

All scoring functions take *squared* point-to-side distances.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .geometry import Cuboid


@dataclass(frozen=True)
class InlierParams:
    """Inlier threshold ``tau`` (m^2), softness ``beta`` and occlusion knee ``tau_c``.

    ``tau_c`` defaults to ``2 * tau``. With ``occlusion_aware=False`` the
    occlusion indicator is ignored and scoring degenerates to plain soft
    inlier counting on the nearest side.
    """

    tau: float = 0.004
    beta: float = 5.0
    tau_c: float | None = None
    occlusion_aware: bool = True

    def __post_init__(self):
        if self.tau_c is None:
            object.__setattr__(self, "tau_c", 2.0 * self.tau)
        if not (self.tau > 0 and self.beta > 0):
            raise ValueError("tau and beta must be positive")
        if self.tau_c < self.tau:
            raise ValueError("tau_c must be >= tau")

    @property
    def leak(self) -> tuple[float, float]:
        """Slope and intercept of the linear branch of the occlusion penalty."""
        s = expit(self.beta * self.tau_c / self.tau - self.beta)
        m = s * (1.0 - s) * self.beta / self.tau
        return m, s - m * self.tau_c


def soft_inlier(d_sq, p: InlierParams):
    """``1 - sigmoid(beta * d_sq / tau - beta)``; 0.5 at ``d_sq == tau``."""
    return expit(p.beta - p.beta * np.asarray(d_sq, dtype=float) / p.tau)


def leaky_occlusion(d_sq, p: InlierParams):
    """Occlusion penalty: ``1 - soft_inlier`` below ``tau_c``, tangent line above."""
    d_sq = np.asarray(d_sq, dtype=float)
    m, b = p.leak
    saturating = expit(p.beta * d_sq / p.tau - p.beta)
    return np.where(d_sq < p.tau_c, saturating, m * d_sq + b)


def occlusion_aware_inlier(y, cuboids: Sequence[Cuboid], p: InlierParams):
    """Per-point score: negative if occluded by some side, else best side fit.

    Returns 0 for an empty cuboid set.
    """
    pts = np.asarray(y, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    mn, mx = kernels.model_state(pts, cuboids, p)
    score = kernels.score_from_state(mn, mx)
    return score[0] if single else score


def inlier_count(y, cuboids: Sequence[Cuboid], p: InlierParams) -> float:
    """Soft, occlusion-aware inlier count of the point set ``y``."""
    return float(np.sum(occlusion_aware_inlier(np.asarray(y).reshape(-1, 3), cuboids, p)))
