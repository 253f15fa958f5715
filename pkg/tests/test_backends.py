"""The compiled kernels and the numpy fallback must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from cuboidfit import kernels
from cuboidfit.geometry import Cuboid
from cuboidfit.inliers import InlierParams
from cuboidfit.solver import fit_minimal_batch
from cuboidfit.synth import make_scene

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                    reason="compiled extension not built")


def _random_model(rng, k):
    return [Cuboid.from_axis_angle(rng.uniform(0.2, 1, 3), rng.normal(size=3),
                                   rng.uniform([-1, -1, 3], [1, 1, 6])) for _ in range(k)]


def test_numpy_always_available():
    assert "numpy" in kernels.available_backends()
    assert kernels.BACKEND in kernels.available_backends()


def test_environment_forces_numpy():
    env = dict(os.environ, CUBOIDFIT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", "import cuboidfit; print(cuboidfit.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_compiled
def test_oa_distances_agree():
    rng = np.random.default_rng(0)
    Y = rng.uniform([-2, -2, 1], [2, 2, 8], (2000, 3))
    M = _random_model(rng, 3)
    a = kernels.oa_distances(Y, M, backend="numpy")
    b = kernels.oa_distances(Y, M, backend="compiled")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_compiled
def test_gains_agree_with_and_without_model():
    rng = np.random.default_rng(1)
    scene = make_scene(2, rng)
    Y = scene.points[::20]
    p = InlierParams()
    hyps = _random_model(rng, 16) + scene.cuboids
    rot, trans, size = kernels._pack(hyps)
    for M in ([], scene.cuboids[:1]):
        state = kernels.model_state(Y, M, p, backend="numpy")
        a = kernels.hypothesis_gains(Y, rot, trans, size, state, p, backend="numpy")
        b = kernels.hypothesis_gains(Y, rot, trans, size, state, p, backend="compiled", workers=2)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-6)


@needs_compiled
def test_solver_agrees():
    rng = np.random.default_rng(2)
    S = rng.normal(size=(32, 6, 3)) * 0.5 + [0, 0, 4]
    a = fit_minimal_batch(S, backend="numpy")
    b = fit_minimal_batch(S, backend="compiled")
    assert np.allclose(a.sizes, b.sizes, atol=1e-9)
    assert np.allclose(a.translations, b.translations, atol=1e-9)
    assert np.allclose(a.loss, b.loss, rtol=1e-9, atol=1e-12)
