import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cuboidfit import kernels
from cuboidfit.geometry import Cuboid, occludes, point_to_side_distance
from cuboidfit.inliers import (InlierParams, inlier_count, leaky_occlusion,
                               occlusion_aware_inlier, soft_inlier)

# sigmoid(5) and sigmoid(-5), evaluated with mpmath at 30 digits
SIGMOID_5 = 0.993307149075715144440638019619
SIGMOID_M5 = 0.00669285092428485555936198038132

params = st.builds(
    lambda tau, beta, mult: InlierParams(tau=tau, beta=beta, tau_c=mult * tau),
    st.floats(1e-4, 0.1), st.floats(0.5, 20.0), st.floats(1.0, 5.0))


def test_params_defaults_and_validation():
    p = InlierParams()
    assert (p.tau, p.beta, p.tau_c) == (0.004, 5.0, 0.008)
    with pytest.raises(ValueError):
        InlierParams(tau=0.004, tau_c=0.001)
    with pytest.raises(ValueError):
        InlierParams(beta=0)


def test_soft_inlier_examples():
    p = InlierParams()
    assert soft_inlier(p.tau, p) == 0.5
    assert soft_inlier(0.0, p) == pytest.approx(SIGMOID_5, rel=1e-15)
    assert soft_inlier(100.0, p) < 1e-100


def test_leaky_occlusion_examples():
    p = InlierParams()
    assert leaky_occlusion(0.0, p) == pytest.approx(SIGMOID_M5, rel=1e-13)
    assert abs(leaky_occlusion(p.tau_c - 1e-9, p) - leaky_occlusion(p.tau_c + 1e-9, p)) < 1e-6
    assert leaky_occlusion(10 * p.tau_c, p) > 1.0


@given(params, st.lists(st.floats(0, 1.0), min_size=2, max_size=30))
def test_soft_inlier_strictly_decreasing(p, ds):
    ds = np.unique(np.round(np.asarray(ds), 4)) * p.tau * 5  # gaps well above float resolution
    v = soft_inlier(ds, p)
    assert np.all(np.diff(v) < 0)


knee_params = st.builds(
    lambda tau, beta, mult: InlierParams(tau=tau, beta=beta, tau_c=mult * tau),
    st.floats(1e-4, 0.1), st.floats(1.0, 10.0), st.floats(1.0, 3.0))


def _mp_penalty_below(p):
    # 1 - f_I on the saturating branch, evaluated at 40 digits
    mpmath.mp.dps = 40
    tau, beta = mpmath.mpf(p.tau), mpmath.mpf(p.beta)
    return lambda d: 1 / (1 + mpmath.exp(beta - beta * d / tau))


@given(knee_params)
def test_leaky_occlusion_c1_at_knee(p):
    below = _mp_penalty_below(p)
    tc = mpmath.mpf(p.tau_c)
    value_gap = abs(float(leaky_occlusion(p.tau_c, p)) - float(below(tc)))
    assert value_gap < 1e-6
    # the branch above tau_c is affine, so a wide difference quotient is exact
    slope_above = (leaky_occlusion(2 * p.tau_c, p) - leaky_occlusion(p.tau_c, p)) / p.tau_c
    slope_below = float(mpmath.diff(below, tc))
    assert abs(slope_above - slope_below) <= 1e-6 * slope_below


def test_occlusion_aware_inlier_examples(box_b):
    p = InlierParams()
    front = occlusion_aware_inlier(np.array([0.1, -0.2, 1.5]), [box_b], p)
    assert front == pytest.approx(SIGMOID_5, rel=1e-9)
    assert occlusion_aware_inlier(np.array([0, 0, 6.0]), [box_b], p) < 0
    side = occlusion_aware_inlier(np.array([5.0, 0, 2.0]), [box_b], p)
    assert 0 <= side < 1e-6
    assert occlusion_aware_inlier(np.array([0, 0, 6.0]), [], p) == 0.0


def test_inlier_count_examples(box_b, rng):
    p = InlierParams()
    assert inlier_count(rng.normal(size=(10, 3)), [], p) == 0.0
    front = np.c_[rng.uniform(-0.5, 0.5, (50, 2)), np.full(50, 1.5)]
    assert 50 * 0.99 <= inlier_count(front, [box_b], p) <= 50
    behind = np.c_[rng.uniform(-0.1, 0.1, (50, 2)), np.full(50, 4.0)]
    assert inlier_count(behind, [box_b], p) < 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_inlier_count_is_additive_over_partitions(seed, parts):
    rng = np.random.default_rng(seed)
    Y = rng.uniform([-2, -2, 0.5], [2, 2, 5], (60, 3))
    M = [Cuboid.from_axis_angle(rng.uniform(0.2, 1, 3), rng.normal(size=3), rng.uniform([-1, -1, 2], [1, 1, 4]))
         for _ in range(2)]
    p = InlierParams()
    whole = occlusion_aware_inlier(Y, M, p)
    labels = rng.integers(0, parts, len(Y))
    pieces = np.zeros(len(Y))
    for k in range(parts):
        sel = labels == k
        if sel.any():
            pieces[sel] = occlusion_aware_inlier(Y[sel], M, p)
    assert np.array_equal(whole, pieces)


@given(st.integers(0, 2**32 - 1))
def test_side_score_trichotomy(seed):
    # per side: fitting (> 0) when not occluded and near, negative when occluded,
    # and ~0 for distant, unoccluded sides
    rng = np.random.default_rng(seed)
    h = Cuboid.from_axis_angle(rng.uniform(0.2, 1, 3), rng.normal(size=3), rng.uniform([-1, -1, 3], [1, 1, 5]))
    p = InlierParams()
    y = h.translation + rng.normal(size=(40, 3)) * 1.5
    scores = []
    for s in range(1, 7):
        d2 = point_to_side_distance(h, y, s) ** 2
        occ = occludes(h, y, s)
        score = np.where(occ, soft_inlier(d2, p) - leaky_occlusion(d2, p), soft_inlier(d2, p))
        fit = ~occ & (d2 < 20 * p.tau)
        assert np.all(score[fit] > 0)
        assert np.all(score[occ & (d2 > p.tau)] < 0)
        assert np.all(np.abs(score[~occ & (d2 > 10)]) < 1e-6)
        scores.append(score)
    scores = np.stack(scores, axis=1)
    for backend in kernels.available_backends():
        mn, mx = kernels.cuboid_terms(y, h.rotation, h.translation, h.size, p, backend=backend)
        expected = kernels.score_from_state(scores.min(axis=1), scores.max(axis=1))
        assert np.allclose(kernels.score_from_state(mn, mx), expected, rtol=1e-9, atol=1e-12)


def test_empty_state_matches_zero_score():
    mn, mx = kernels.empty_state(4)
    assert np.array_equal(kernels.score_from_state(mn, mx), np.zeros(4))
