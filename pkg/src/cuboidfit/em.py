"""Expectation-maximisation refinement of a fitted cuboid set.

Each point is softly associated with the cuboids through a Gaussian
likelihood on its surface distance. The M-step is approximated by Adam
ascent on the expected complete-data log-likelihood ``Q``; associations are
refreshed after every step. The returned model is the iterate with the
highest ``Q(. | M_input)``, so refinement never lowers ``Q`` below its
starting value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .geometry import Cuboid
from .solver import SolverOptions, rodrigues


class EMError(ArithmeticError):
    """The expected log-likelihood became non-finite."""


@dataclass(frozen=True)
class EMConfig:
    sigma: float = math.sqrt(0.004)
    iterations: int = 50
    step_size: float = 1e-3
    bounds: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")


@dataclass(frozen=True)
class EMResult:
    cuboids: list
    q_initial: float
    q_final: float
    history: np.ndarray  # Q(M_k | M_input) for every iterate


def _unpack(M: Sequence[Cuboid]):
    a = np.array([h.size for h in M], dtype=float).reshape(-1, 3)
    r = np.array([h.axis_angle for h in M], dtype=float).reshape(-1, 3)
    t = np.array([h.translation for h in M], dtype=float).reshape(-1, 3)
    return np.concatenate([a, r, t], axis=1)


def _pack(x) -> list:
    R = rodrigues(x[:, 3:6])[0]
    return [Cuboid(x[k, :3], R[k], x[k, 6:]) for k in range(len(x))]


def _sq_dist(Y, x, with_grad=False, weights=None):
    """Squared surface distances ``(K, N)`` and optionally the gradient of
    ``sum(weights * d2)`` w.r.t. the stacked parameters ``x`` ``(K, 9)``."""
    a, r, t = x[:, None, :3], x[:, 3:6], x[:, None, 6:]
    R, dR = rodrigues(r)
    p = Y[None, :, :] - t
    local = np.einsum("knj,kjc->knc", p, R)
    q = np.abs(local) - a
    pos = np.maximum(q, 0.0)
    idx = np.argmax(q, axis=-1)
    inner = np.maximum(-np.take_along_axis(q, idx[..., None], -1)[..., 0], 0.0)
    d2 = inner**2 + np.sum(pos**2, axis=-1)
    if not with_grad:
        return d2
    w = weights[..., None]
    sgn = np.sign(local)
    onehot = idx[..., None] == np.arange(3)
    g_local = w * (2.0 * pos * sgn - onehot * (2.0 * inner[..., None]) * sgn)
    ga = np.sum(w * (-2.0 * pos + onehot * (2.0 * inner[..., None])), axis=1)
    gt = -np.einsum("kjc,knc->kj", R, g_local)
    gr = np.einsum("knj,kijc,knc->ki", p, dR, g_local)
    return d2, np.concatenate([ga, gr, gt], axis=1)


def posteriors(Y, M: Sequence[Cuboid], sigma: float) -> np.ndarray:
    """Association probabilities ``(K, N)``; each column sums to 1."""
    d2 = _sq_dist(np.asarray(Y, dtype=float).reshape(-1, 3), _unpack(M))
    return softmax(-d2 / (2.0 * sigma**2), axis=0)


def _q(d2_new, gamma, sigma):
    K = len(d2_new)
    log_norm = -math.log(sigma * math.sqrt(2.0 * math.pi))
    return float(np.sum(gamma * (-math.log(K) + log_norm - d2_new / (2.0 * sigma**2))))


def q_value(Y, M_new: Sequence[Cuboid], M_old: Sequence[Cuboid], em: EMConfig | None = None) -> float:
    """``Q(M_new | M_old)``: expected log-likelihood under the posteriors of ``M_old``."""
    em = em or EMConfig()
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    gamma = posteriors(Y, M_old, em.sigma)
    return _q(_sq_dist(Y, _unpack(M_new)), gamma, em.sigma)


def log_likelihood(Y, M: Sequence[Cuboid], em: EMConfig | None = None) -> float:
    """Mixture log-likelihood of the points under a uniform prior over cuboids."""
    em = em or EMConfig()
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    d2 = _sq_dist(Y, _unpack(M))
    log_norm = -math.log(em.sigma * math.sqrt(2.0 * math.pi))
    return float(np.sum(logsumexp(-d2 / (2.0 * em.sigma**2), axis=0) - math.log(len(M)) + log_norm))


def em_refine_detailed(Y, M: Sequence[Cuboid], em: EMConfig | None = None) -> EMResult:
    em = em or EMConfig()
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    if len(M) == 0:
        raise ValueError("need at least one cuboid")
    x = _unpack(M)
    s2 = em.sigma**2
    d2 = _sq_dist(Y, x)
    if not np.all(np.isfinite(d2)):
        raise EMError("non-finite expected log-likelihood at iteration 0")
    gamma0 = softmax(-d2 / (2.0 * s2), axis=0)
    b1, b2, eps = em.bounds.beta1, em.bounds.beta2, em.bounds.eps
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_q = x.copy(), -np.inf
    history = []
    for k in range(em.iterations + 1):
        d2 = _sq_dist(Y, x)
        q0 = _q(d2, gamma0, em.sigma)
        if not math.isfinite(q0):
            raise EMError(f"non-finite expected log-likelihood at iteration {k}")
        history.append(q0)
        if q0 > best_q:
            best_q, best_x = q0, x.copy()
        if k == em.iterations:
            break
        gamma = softmax(-d2 / (2.0 * s2), axis=0)
        _, grad_d2 = _sq_dist(Y, x, with_grad=True, weights=gamma)
        g = -grad_d2 / (2.0 * s2)  # ascent direction on Q
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** (k + 1))
        vhat = v / (1.0 - b2 ** (k + 1))
        x = x + em.step_size * mhat / (np.sqrt(vhat) + eps)
        x[:, :3] = np.clip(x[:, :3], em.bounds.a_min, em.bounds.a_max)
    return EMResult(_pack(best_x), history[0], best_q, np.array(history))


def em_refine(Y, M: Sequence[Cuboid], em: EMConfig | None = None) -> list:
    """Refined cuboids with ``Q(M' | M) >= Q(M | M)``."""
    return em_refine_detailed(Y, M, em).cuboids
