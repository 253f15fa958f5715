"""Finite-difference check of the solver's implicit-function Jacobian.

The reference re-solves the pose with sizes held fixed after nudging one
input coordinate, using scipy's least-squares solver on signed point-to-box
distances. It shares no derivative code with :mod:`cuboidfit.solver`.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .geometry import Cuboid
from .solver import DegenerateConfiguration, solver_jacobian
from .synth import SynthRanges, random_cuboid, sample_visible_points


def _signed_distances(x, size, S):
    R = Rotation.from_rotvec(x[:3]).as_matrix()
    local = (S - x[3:]) @ R
    q = np.abs(local) - size
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    return outside + np.minimum(q.max(axis=1), 0.0)


def resolve_pose(S, h: Cuboid) -> np.ndarray:
    """Axis-angle and translation that put ``S`` on the surface of a box of ``h``'s size."""
    x0 = np.concatenate([h.axis_angle, h.translation])
    sol = least_squares(_signed_distances, x0, args=(h.size, S), method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    return sol.x


def fd_jacobian(S, h: Cuboid, step: float = 1e-4) -> np.ndarray:
    """Central differences of the re-solved pose, shape ``(6, 3C)``."""
    S = np.asarray(S, dtype=float)
    cols = []
    for k in range(len(S)):
        for j in range(3):
            plus, minus = S.copy(), S.copy()
            plus[k, j] += step
            minus[k, j] -= step
            cols.append((resolve_pose(plus, h) - resolve_pose(minus, h)) / (2.0 * step))
    return np.stack(cols, axis=1)


def exact_minimal_set(rng: np.random.Generator, C: int = 6, ranges: SynthRanges | None = None):
    """A random cuboid and ``C`` visible points on it, so the cuboid fits exactly."""
    ranges = ranges or SynthRanges()
    while True:
        h = random_cuboid(ranges, rng)
        if not h.contains(np.zeros(3)):
            return h, sample_visible_points(h, C, rng)


def relative_error(J, J_ref) -> float:
    return float(np.linalg.norm(J - J_ref) / np.linalg.norm(J_ref))


def run_grad_check(trials: int = 50, seed: int = 1, step: float = 1e-4, C: int = 6):
    """Compare both Jacobians on ``trials`` non-degenerate minimal sets.

    Returns per-trial rows and a summary with the median and 90th percentile
    relative error. Degenerate sets (pose not determined) are redrawn and
    counted.
    """
    rng = np.random.default_rng(seed)
    rows, skipped = [], 0
    while len(rows) < trials:
        h, S = exact_minimal_set(rng, C)
        try:
            J = solver_jacobian(S, h)
        except DegenerateConfiguration:
            skipped += 1
            continue
        J_ref = fd_jacobian(S, h, step)
        rows.append({"trial": len(rows), "relative_error": relative_error(J, J_ref),
                     "cond": float(np.linalg.cond(J))})
    errs = np.array([r["relative_error"] for r in rows])
    summary = {"trials": trials, "skipped_degenerate": skipped, "step": step,
               "median": float(np.median(errs)), "p90": float(np.percentile(errs, 90))}
    return rows, summary
