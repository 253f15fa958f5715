"""Numerical minimal solver: fit one cuboid to a handful of points.

The solver minimises ``sum_k d(h, y_k)^2 * (a_x + a_y + a_z)`` with Adam,
starting from a centroid/SVD initialisation, and keeps half-extents inside
``[a_min, a_max]``. Everything is vectorised over a leading hypothesis axis
so thousands of minimal sets are solved at once; the arithmetic is purely
elementwise, so a set's result does not depend on what else is in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .geometry import Cuboid


class SolverError(RuntimeError):
    """The solver produced non-finite values."""


class DegenerateConfiguration(ValueError):
    """The minimal set does not constrain the pose."""


@dataclass(frozen=True)
class SolverOptions:
    iterations: int = 50
    step_size: float = 0.01
    a_min: float = 1e-3
    a_max: float = 2.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.a_min < self.a_max:
            raise ValueError("need 0 < a_min < a_max")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass(frozen=True)
class FitResult:
    cuboid: Cuboid
    loss: float
    initial_loss: float
    degenerate: bool


@dataclass(frozen=True)
class BatchFit:
    sizes: np.ndarray
    rotvecs: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    loss: np.ndarray
    initial_loss: np.ndarray
    degenerate: np.ndarray
    finite: np.ndarray

    def cuboid(self, i: int) -> Cuboid:
        return Cuboid(self.sizes[i], self.rotations[i], self.translations[i])


# ---------------------------------------------------------------------------
# rotations


def _skew(v):
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [np.stack([z, -w, y], -1), np.stack([w, z, -x], -1), np.stack([-y, x, z], -1)], -2
    )


def _mm(A, B):
    # 3x3 products written out; keeps results independent of batch layout
    return sum(A[..., :, k, None] * B[..., None, k, :] for k in range(3))


def rodrigues(r):
    """Rotation matrices and their derivatives for axis-angle vectors ``r`` (..., 3).

    Returns ``(R, dR)`` with ``dR[..., i, :, :] = dR/dr_i``.
    """
    r = np.asarray(r, dtype=float)
    theta2 = np.sum(r * r, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    K = _skew(r / safe[..., None])
    K2 = _mm(K, K)
    eye = np.broadcast_to(np.eye(3), r.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    R = eye + s * K + c * K2
    R = np.where(small[..., None, None], eye + _skew(r), R)

    # dR/dr_i = (r_i [r]x + [r x (I - R) e_i]x) R / |r|^2
    IR = eye - R
    rx = _skew(r)
    dR = np.empty(r.shape[:-1] + (3, 3, 3))
    for i in range(3):
        col = IR[..., :, i]
        cross = np.cross(r, col)
        A = (r[..., i, None, None] * rx + _skew(cross)) / np.where(small, 1.0, theta2)[..., None, None]
        ei = np.zeros(3)
        ei[i] = 1.0
        dR[..., i, :, :] = np.where(small[..., None, None], _skew(np.broadcast_to(ei, r.shape)), _mm(A, R))
    return R, dR


# ---------------------------------------------------------------------------
# objective


# |x| below this is at the mid-plane kink of |x| and gets a zero subgradient, so
# roundoff in points lying on a slab's mid-plane cannot pick a face
KINK_TOL = 1e-12
# gradient entries this small are roundoff of an exact zero (e.g. at the
# symmetric start of a coplanar set); Adam would otherwise normalise them
# into full-size steps
GRAD_FLOOR = 1e-12


def _kink_sign(x):
    return (x > KINK_TOL).astype(float) - (x < -KINK_TOL)


def _to_local(S, R, t):
    p = S - t[..., None, :]
    local = p[..., 0, None] * R[..., None, 0, :] + p[..., 1, None] * R[..., None, 1, :] \
        + p[..., 2, None] * R[..., None, 2, :]
    return p, local


def _loss_and_grad(S, a, r, t):
    """Batched ``||F||_1`` and its gradient w.r.t. sizes, axis-angle and translation."""
    R, dR = rodrigues(r)
    p, local = _to_local(S, R, t)
    q = np.abs(local) - a[..., None, :]
    sgn = _kink_sign(local)
    pos = np.maximum(q, 0.0)
    idx = np.argmax(q, axis=-1)  # nearest face for interior points; first on ties
    inner = np.maximum(-np.take_along_axis(q, idx[..., None], -1)[..., 0], 0.0)
    d2 = inner**2 + np.sum(pos**2, axis=-1)
    s = np.sum(a, axis=-1)
    loss = np.sum(d2, axis=-1) * s

    onehot = idx[..., None] == np.arange(3)
    g_local = 2.0 * pos * sgn - onehot * (2.0 * inner[..., None]) * sgn
    g_a_point = -2.0 * pos + onehot * (2.0 * inner[..., None])
    ga = s[..., None] * np.sum(g_a_point, axis=-2) + np.sum(d2, axis=-1)[..., None]

    # d(local)/dt = -R^T  ->  dd2/dt = -R g
    Rg = g_local[..., None, :] * R[..., None, :, :]
    gt = -s[..., None] * np.sum(np.sum(Rg, axis=-1), axis=-2)
    gr = np.empty_like(r)
    for i in range(3):
        dl = p[..., 0, None] * dR[..., None, i, 0, :] + p[..., 1, None] * dR[..., None, i, 1, :] \
            + p[..., 2, None] * dR[..., None, i, 2, :]
        gr[..., i] = s * np.sum(np.sum(g_local * dl, axis=-1), axis=-1)
    return loss, ga, gr, gt


def objective_residuals(S, h: Cuboid) -> np.ndarray:
    """Per-point ``d(h, y)^2 * (a_x + a_y + a_z)``."""
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    local = h.to_local(S)
    q = np.abs(local) - h.size
    inner = np.maximum(np.min(-q, axis=-1), 0.0)
    d2 = inner**2 + np.sum(np.maximum(q, 0.0) ** 2, axis=-1)
    return d2 * float(np.sum(h.size))


# ---------------------------------------------------------------------------
# initialisation


def _init_batch(S, opts: SolverOptions):
    S = np.asarray(S, dtype=float)
    t0 = S.mean(axis=-2)
    X = S - t0[..., None, :]
    _, sv, Vt = np.linalg.svd(X, full_matrices=False)
    R = np.swapaxes(Vt, -1, -2).copy()
    # singular vectors carry an arbitrary sign; make each axis' largest entry positive
    big = np.take_along_axis(R, np.argmax(np.abs(R), axis=-2)[..., None, :], axis=-2)
    R *= np.where(big < 0, -1.0, 1.0)
    flip = np.linalg.det(R) < 0
    R[flip, :, 2] *= -1.0
    degenerate = (sv[..., 0] <= 1e-12) | (sv[..., 1] <= 1e-9 * sv[..., 0])
    R[degenerate] = np.eye(3)
    _, local = _to_local(S, R, t0)
    a0 = np.clip(np.max(np.abs(local), axis=-2), opts.a_min, opts.a_max)
    return a0, R, t0, degenerate


def init_estimate(S, opts: SolverOptions | None = None) -> tuple[Cuboid, bool]:
    """Centroid, principal axes and bounding half-extents of the points.

    Returns the initial cuboid and whether the point set was degenerate
    (fewer than two independent directions), in which case the rotation
    falls back to the identity.
    """
    opts = opts or SolverOptions()
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    if len(S) < 3:
        raise ValueError("need at least 3 points")
    a0, R, t0, degenerate = _init_batch(S[None], opts)
    return Cuboid(a0[0], R[0], t0[0]), bool(degenerate[0])


# ---------------------------------------------------------------------------
# Adam


def _adam_numpy(S, x, opts: SolverOptions):
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x = x.copy()
    best_loss = np.full(len(S), np.inf)
    init_loss = None
    b1, b2 = opts.beta1, opts.beta2
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(opts.iterations + 1):
            loss, ga, gr, gt = _loss_and_grad(S, x[:, :3], x[:, 3:6], x[:, 6:])
            if init_loss is None:
                init_loss = loss.copy()
            better = loss < best_loss
            best_loss = np.where(better, loss, best_loss)
            best_x[better] = x[better]
            if k == opts.iterations:
                break
            g = np.concatenate([ga, gr, gt], axis=-1)
            g[np.abs(g) <= GRAD_FLOOR] = 0.0
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** (k + 1))
            vhat = v / (1.0 - b2 ** (k + 1))
            x = x - opts.step_size * mhat / (np.sqrt(vhat) + opts.eps)
            x[:, :3] = np.clip(x[:, :3], opts.a_min, opts.a_max)
    return best_x, best_loss, init_loss


def _run_adam(S, x, opts: SolverOptions, backend, workers):
    mod = kernels.solver_module(backend)
    if mod is None:
        return _adam_numpy(S, x, opts)
    return mod.adam_fit(np.ascontiguousarray(S), np.ascontiguousarray(x), opts.iterations,
                        opts.step_size, opts.a_min, opts.a_max, opts.beta1, opts.beta2,
                        opts.eps, int(workers))


def fit_minimal_batch(S, opts: SolverOptions | None = None, init=None,
                      backend: str | None = None, workers: int = 1) -> BatchFit:
    """Fit one cuboid per minimal set in ``S`` of shape ``(H, C, 3)``.

    Returns the best iterate (lowest ``||F||_1``) of each run, which is never
    worse than the initial estimate. ``init`` optionally replaces the SVD
    initialisation with ``(sizes, rotvecs, translations)`` arrays of shape
    ``(H, 3)``.
    """
    opts = opts or SolverOptions()
    S = np.asarray(S, dtype=float)
    if S.ndim != 3 or S.shape[-1] != 3:
        raise ValueError("expected minimal sets of shape (H, C, 3)")
    # optimise in centroid coordinates: the run then only sees relative positions
    centre = S.mean(axis=-2)
    S = S - centre[:, None, :]
    if init is None:
        a, R0, t, degenerate = _init_batch(S, opts)
        t = np.zeros_like(t)
        r = Rotation.from_matrix(R0).as_rotvec() if len(S) else np.zeros((0, 3))
    else:
        a, r, t = (np.array(v, dtype=float).reshape(len(S), 3) for v in init)
        a = np.clip(a, opts.a_min, opts.a_max)
        t = t - centre
        degenerate = np.zeros(len(S), dtype=bool)
    x = np.concatenate([a, r, t], axis=-1)
    best_x, best_loss, init_loss = _run_adam(np.ascontiguousarray(S), x, opts, backend, workers)
    best_x[:, 6:] += centre
    finite = np.all(np.isfinite(best_x), axis=-1) & np.isfinite(best_loss)
    safe_x = np.where(finite[:, None], best_x, np.concatenate(
        [np.full((len(S), 3), opts.a_min), np.zeros((len(S), 6))], axis=-1))
    rotations = rodrigues(safe_x[:, 3:6])[0]
    return BatchFit(
        sizes=safe_x[:, :3],
        rotvecs=safe_x[:, 3:6],
        rotations=rotations,
        translations=safe_x[:, 6:],
        loss=best_loss,
        initial_loss=init_loss,
        degenerate=degenerate,
        finite=finite,
    )


def fit_minimal(S, opts: SolverOptions | None = None) -> FitResult:
    """Fit a single cuboid to the points ``S`` of shape ``(C, 3)``."""
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    if len(S) < 3:
        raise ValueError("need at least 3 points")
    if not np.all(np.isfinite(S)):
        raise ValueError("minimal set contains non-finite coordinates")
    fit = fit_minimal_batch(S[None], opts)
    if not fit.finite[0]:
        raise SolverError(f"non-finite solver state for minimal set {S.tolist()}")
    return FitResult(
        cuboid=fit.cuboid(0),
        loss=float(fit.loss[0]),
        initial_loss=float(fit.initial_loss[0]),
        degenerate=bool(fit.degenerate[0]),
    )


# ---------------------------------------------------------------------------
# implicit differentiation


def signed_distance_jacobians(S, h: Cuboid):
    """Signed point-to-surface distances and their first derivatives.

    Returns ``(g, J_pose, J_points)`` where ``J_pose`` is ``(C, 6)`` over
    ``(axis-angle, translation)`` and ``J_points`` is ``(C, 3)`` holding the
    gradient of each residual w.r.t. its own point.
    """
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    r = h.axis_angle
    R, dR = rodrigues(r)
    p = S - h.translation
    local = p @ R
    q = np.abs(local) - h.size
    sgn = np.sign(local)
    pos = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(pos, axis=-1)
    qmax = q.max(axis=-1)
    g = out_norm + np.minimum(qmax, 0.0)
    outside = qmax > 0
    n = np.where(
        outside[:, None],
        pos * sgn / np.where(outside, out_norm, 1.0)[:, None],
        (np.argmax(q, axis=-1)[:, None] == np.arange(3)) * sgn,
    )
    J_points = n @ R.T
    J_t = -J_points
    J_r = np.stack([np.sum(n * (p @ dR[i]), axis=-1) for i in range(3)], axis=-1)
    return g, np.concatenate([J_r, J_t], axis=-1), J_points


def solver_jacobian(S, h: Cuboid, rcond: float = 1e-8, max_cond: float = 1e8) -> np.ndarray:
    """Linearised response of the fitted pose to perturbations of the points.

    Returns the ``(6, 3C)`` matrix ``d(r, t)/dS`` (rows: axis-angle then
    translation; columns: point-major coordinates). Size derivatives are
    masked out and therefore not provided. ``h`` must fit ``S`` (residuals
    near zero). The zero set of the squared-distance objective coincides with
    that of the signed distance, which unlike the squared objective has
    non-vanishing derivatives there, so the implicit function theorem is
    applied to the signed residual.
    """
    S = np.asarray(S, dtype=float).reshape(-1, 3)
    _, J_pose, J_points = signed_distance_jacobians(S, h)
    C = len(S)
    J_S = np.zeros((C, 3 * C))
    for k in range(C):
        J_S[k, 3 * k:3 * k + 3] = J_points[k]
    U, sv, Vt = np.linalg.svd(J_pose, full_matrices=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > max_cond:
        raise DegenerateConfiguration(
            f"pose Jacobian is rank deficient (singular values {sv.tolist()})")
    keep = sv > rcond * sv[0]
    inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
    pinv = (Vt.T * inv) @ U.T
    return -pinv @ J_S
