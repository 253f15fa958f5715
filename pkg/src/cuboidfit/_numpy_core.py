"""Pure numpy implementation of the ``_core`` kernels (reference and fallback)."""
import numpy as np
from scipy.special import expit

from .geometry import occlusion_mask_local, side_distances_sq_local

_CHUNK = 1 << 16


def _side_scores(points, R, t, a, tau, beta, tau_c, m, b, occlusion_aware):
    local = (points - t) @ R
    d2 = side_distances_sq_local(local, a)
    f_in = expit(beta - beta * d2 / tau)
    if not occlusion_aware:
        return f_in
    occl = occlusion_mask_local(local, a, -(t @ R))
    f_occ = np.where(d2 < tau_c, expit(beta * d2 / tau - beta), m * d2 + b)
    return np.where(occl, f_in - f_occ, f_in)


def cuboid_terms(points, R, t, a, tau, beta, tau_c, m, b, occlusion_aware):
    scores = _side_scores(points, R, t, a, tau, beta, tau_c, m, b, occlusion_aware)
    return scores.min(axis=1), scores.max(axis=1)


def combined(mn, mx):
    return np.where(mx == -np.inf, 0.0, np.where(mn < 0, mn, mx))


def hypothesis_gains(points, rotations, translations, sizes, state_min, state_max,
                     tau, beta, tau_c, m, b, occlusion_aware, num_threads=1):
    old = combined(state_min, state_max)
    gains = np.empty(len(rotations))
    for h in range(len(rotations)):
        total = 0.0
        for lo in range(0, len(points), _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            mn, mx = cuboid_terms(points[sl], rotations[h], translations[h], sizes[h],
                                  tau, beta, tau_c, m, b, occlusion_aware)
            new = combined(np.minimum(mn, state_min[sl]), np.maximum(mx, state_max[sl]))
            total += float(np.sum(new - old[sl]))
        gains[h] = total
    return gains


def oa_distances(points, rotations, translations, sizes):
    n = len(points)
    if len(rotations) == 0:
        return np.full(n, np.inf)
    surf = np.full(n, np.inf)
    occ = np.zeros(n)
    for R, t, a in zip(rotations, translations, sizes):
        local = (points - t) @ R
        q = np.abs(local) - a
        d2 = np.maximum(np.min(-q, axis=1), 0.0) ** 2 + np.sum(np.maximum(q, 0.0) ** 2, axis=1)
        surf = np.minimum(surf, d2)
        mask = occlusion_mask_local(local, a, -(t @ R))
        side = side_distances_sq_local(local, a)
        occ = np.maximum(occ, np.max(np.where(mask, side, 0.0), axis=1))
    return np.sqrt(np.maximum(surf, occ))
