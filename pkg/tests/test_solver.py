import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from cuboidfit import kernels
from cuboidfit.geometry import Cuboid
from cuboidfit.gradcheck import exact_minimal_set, fd_jacobian, relative_error, resolve_pose
from cuboidfit.solver import (DegenerateConfiguration, SolverOptions, _loss_and_grad,
                              fit_minimal, fit_minimal_batch, init_estimate,
                              objective_residuals, rodrigues, solver_jacobian)
from cuboidfit.synth import sample_visible_points

AXIS_POINTS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


def test_options_validation():
    SolverOptions()
    with pytest.raises(ValueError):
        SolverOptions(a_min=2.0, a_max=1.0)
    with pytest.raises(ValueError):
        SolverOptions(iterations=0)


def test_objective_residual_examples(unit_box, rng):
    assert np.all(objective_residuals(unit_box.sample_surface(20, rng), unit_box) == 0)
    assert objective_residuals(np.array([[2.0, 0, 0]]), unit_box)[0] == pytest.approx(3.0)
    big = Cuboid(2 * unit_box.size)
    assert np.all(objective_residuals(big.sample_surface(20, rng), big) == 0)


def test_rodrigues_derivative_matches_finite_differences(rng):
    for r in [rng.normal(size=3), np.array([1e-9, 0, 0]), np.array([0, 0, np.pi - 1e-3])]:
        R, dR = rodrigues(r)
        assert np.allclose(R, Rotation.from_rotvec(r).as_matrix(), atol=1e-12)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (Rotation.from_rotvec(r + e).as_matrix() - Rotation.from_rotvec(r - e).as_matrix()) / (2 * h)
            assert np.allclose(dR[i], fd, atol=1e-8)


def test_objective_gradient_matches_finite_differences(rng):
    # smooth region: points off the surface, away from face-assignment ties
    for _ in range(20):
        S = rng.normal(size=(1, 6, 3)) * 0.8
        x = np.r_[rng.uniform(0.3, 1.0, 3), rng.normal(size=3), rng.normal(size=3) * 0.1]
        _, ga, gr, gt = _loss_and_grad(S, x[None, :3], x[None, 3:6], x[None, 6:])
        grad = np.r_[ga[0], gr[0], gt[0]]
        fd = np.empty(9)
        for j in range(9):
            e = np.zeros(9)
            e[j] = 1e-6
            lp = _loss_and_grad(S, (x + e)[None, :3], (x + e)[None, 3:6], (x + e)[None, 6:])[0][0]
            lm = _loss_and_grad(S, (x - e)[None, :3], (x - e)[None, 3:6], (x - e)[None, 6:])[0][0]
            fd[j] = (lp - lm) / 2e-6
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)


def test_init_estimate_examples():
    h0, degenerate = init_estimate(AXIS_POINTS)
    assert not degenerate
    assert np.allclose(h0.translation, 0, atol=1e-15)
    assert np.all(np.isfinite(objective_residuals(AXIS_POINTS, h0)))
    assert np.all(np.abs(h0.to_local(AXIS_POINTS)) <= h0.size + 1e-12)
    rng = np.random.default_rng(0)
    S = AXIS_POINTS * rng.uniform(0.5, 1.5, (6, 1)) + rng.normal(size=(6, 3)) * 0.1
    h1, _ = init_estimate(S)
    h2, _ = init_estimate(S + [1, 2, 3])
    assert np.allclose(h2.translation - h1.translation, [1, 2, 3], atol=1e-12)
    assert np.allclose(h2.size, h1.size, atol=1e-12)


def test_init_estimate_degenerate_falls_back_to_identity():
    h0, degenerate = init_estimate(np.tile([1.0, 2.0, 3.0], (6, 1)))
    assert degenerate
    assert np.array_equal(h0.rotation, np.eye(3))
    with pytest.raises(ValueError):
        init_estimate(np.zeros((2, 3)))


def test_optimisation_reduces_init_residual():
    rng = np.random.default_rng(11)
    wins = 0
    for _ in range(100):
        _, S = exact_minimal_set(rng)
        fit = fit_minimal(S)
        wins += fit.loss < fit.initial_loss
    assert wins >= 95


def test_exact_init_is_a_fixed_point(rng):
    h, S = exact_minimal_set(rng)
    fit = fit_minimal_batch(S[None], init=(h.size[None], h.axis_angle[None], h.translation[None]))
    assert fit.loss[0] < 1e-9


def test_coplanar_points_clamp_thinnest_axis():
    # 20 seeded flat sets, each must collapse onto the minimum thickness
    a_min = SolverOptions().a_min
    for seed in range(20):
        rng = np.random.default_rng(seed)
        S = np.c_[rng.uniform(-0.5, 0.5, (6, 2)), np.full(6, rng.uniform(1.0, 5.0))]
        fit = fit_minimal(S)
        assert np.all(objective_residuals(S, fit.cuboid) < 1e-6), seed
        assert fit.cuboid.size.min() == a_min, seed


def test_nonfinite_points_rejected():
    with pytest.raises(ValueError):
        fit_minimal(np.full((6, 3), np.nan))


# -- properties -------------------------------------------------------------

minimal_sets = st.integers(0, 2**32 - 1).map(lambda s: exact_minimal_set(np.random.default_rng(s))[1])


@given(minimal_sets)
def test_deterministic_and_backend_independent(S):
    a = fit_minimal_batch(S[None], backend="numpy")
    b = fit_minimal_batch(S[None], backend="numpy")
    assert np.array_equal(a.sizes, b.sizes) and np.array_equal(a.translations, b.translations)
    if "compiled" in kernels.available_backends():
        c = fit_minimal_batch(np.stack([S] * 3), backend="compiled", workers=1)
        d = fit_minimal_batch(np.stack([S] * 3), backend="compiled", workers=3)
        assert np.array_equal(c.sizes, d.sizes) and np.array_equal(c.rotvecs, d.rotvecs)


@given(minimal_sets, st.tuples(*[st.floats(-5, 5)] * 3))
def test_translation_equivariance(S, v):
    v = np.array(v)
    a = fit_minimal(S).cuboid
    b = fit_minimal(S + v).cuboid
    assert np.allclose(b.translation, a.translation + v, atol=1e-6)
    assert np.allclose(b.size, a.size, atol=1e-6)
    assert np.allclose(b.rotation, a.rotation, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_sizes_clamped_and_residual_never_worse(seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(8, 6, 3)) * rng.uniform(0.001, 5.0)
    opts = SolverOptions(a_min=0.05, a_max=0.5)
    fit = fit_minimal_batch(S, opts)
    assert np.all((fit.sizes >= 0.05) & (fit.sizes <= 0.5))
    assert np.all(fit.loss <= fit.initial_loss)


# -- implicit-function Jacobian ---------------------------------------------

def _nondegenerate(rng):
    while True:
        h, S = exact_minimal_set(rng)
        try:
            return h, S, solver_jacobian(S, h)
        except DegenerateConfiguration:
            continue


def test_jacobian_shape_and_fd_agreement():
    rng = np.random.default_rng(5)
    h, S, J = _nondegenerate(rng)
    assert J.shape == (6, 18)
    assert relative_error(J, fd_jacobian(S, h)) < 0.05


def test_jacobian_predicts_rigid_translation():
    rng = np.random.default_rng(8)
    h, S, J = _nondegenerate(rng)
    delta = np.array([1e-3, 0, 0])
    predicted = J @ np.tile(delta, len(S))
    resolved = resolve_pose(S + delta, h) - np.r_[h.axis_angle, h.translation]
    assert np.linalg.norm(predicted[3:] - resolved[3:]) <= 0.1 * np.linalg.norm(resolved[3:])
    assert np.allclose(resolved[3:], delta, rtol=0.1, atol=1e-6)


def test_jacobian_translation_blocks_sum_to_identity():
    # two points on each of three faces meeting at a corner: all six pose directions are pinned
    h = Cuboid(np.array([0.4, 0.3, 0.5]), np.eye(3), [0.0, 0.0, 3.0])
    local = np.array([[-0.4, 0.1, -0.2], [-0.4, -0.15, 0.3],
                      [0.2, -0.3, 0.1], [-0.1, -0.3, -0.3],
                      [0.1, 0.2, -0.5], [-0.2, -0.1, -0.5]])
    S = h.to_world(local)
    J = solver_jacobian(S, h)
    total = sum(J[3:, 3 * k:3 * k + 3] for k in range(len(S)))
    assert np.allclose(total, np.eye(3), atol=0.1)


def test_jacobian_predicts_rotation_about_optical_axis():
    rng = np.random.default_rng(21)
    h, S, J = _nondegenerate(rng)
    G = Rotation.from_rotvec([0, 0, 1e-3])
    S2 = G.apply(S)
    predicted = J @ (S2 - S).ravel()
    resolved = resolve_pose(S2, h)
    expected_r = (G * Rotation.from_rotvec(h.axis_angle)).as_rotvec() - h.axis_angle
    dr = resolved[:3] - h.axis_angle
    assert np.allclose(dr, expected_r, atol=1e-6)
    assert np.linalg.norm(predicted[:3] - dr) <= 0.1 * np.linalg.norm(dr)


def test_single_face_set_is_degenerate():
    h = Cuboid(np.array([0.5, 0.5, 0.5]), np.eye(3), [0, 0, 3.0])
    rng = np.random.default_rng(2)
    S = np.c_[rng.uniform(-0.5, 0.5, (6, 2)), np.full(6, 2.5)]
    with pytest.raises(DegenerateConfiguration):
        solver_jacobian(S, h)


def test_visible_samples_are_exact_fits(rng):
    h, S = exact_minimal_set(rng)
    assert np.all(objective_residuals(S, h) < 1e-18)
    assert len(sample_visible_points(h, 0, rng)) == 0
