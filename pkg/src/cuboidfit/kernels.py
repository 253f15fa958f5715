"""Dispatch to the compiled kernels, or to numpy when they are unavailable.

Set ``CUBOIDFIT_BACKEND=numpy`` to force the pure-Python path.
"""
from __future__ import annotations

import os
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _numpy_core

if TYPE_CHECKING:
    from .geometry import Cuboid
    from .inliers import InlierParams

_compiled = None
if os.environ.get("CUBOIDFIT_BACKEND", "").lower() != "numpy":
    try:
        from . import _core as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"
_IMPL = {"compiled": _compiled, "numpy": _numpy_core}


def available_backends() -> list[str]:
    return [name for name, mod in _IMPL.items() if mod is not None]


def _impl(backend):
    mod = _IMPL[backend or BACKEND]
    if mod is None:
        raise RuntimeError("compiled kernels are not built")
    return mod


def solver_module(backend=None):
    """Compiled module providing ``adam_fit``, or ``None`` for the numpy solver."""
    mod = _impl(backend)
    return None if mod is _numpy_core else mod


def _pack(cuboids: Sequence["Cuboid"]):
    k = len(cuboids)
    rot = np.ascontiguousarray([h.rotation for h in cuboids], dtype=float).reshape(k, 3, 3)
    trans = np.ascontiguousarray([h.translation for h in cuboids], dtype=float).reshape(k, 3)
    size = np.ascontiguousarray([h.size for h in cuboids], dtype=float).reshape(k, 3)
    return rot, trans, size


def _param_args(p: "InlierParams"):
    m, b = p.leak
    return p.tau, p.beta, p.tau_c, m, b, p.occlusion_aware


def cuboid_terms(points, rotation, translation, size, p: "InlierParams", backend=None):
    """Lowest and highest side score of every point against one cuboid."""
    return _impl(backend).cuboid_terms(
        np.ascontiguousarray(points, dtype=float),
        np.ascontiguousarray(rotation, dtype=float),
        np.ascontiguousarray(translation, dtype=float),
        np.ascontiguousarray(size, dtype=float),
        *_param_args(p),
    )


def empty_state(n: int):
    return np.full(n, np.inf), np.full(n, -np.inf)


def model_state(points, cuboids: Sequence["Cuboid"], p: "InlierParams", backend=None):
    """Running (min, max) side scores of each point over a cuboid set."""
    mn, mx = empty_state(len(points))
    for h in cuboids:
        hmn, hmx = cuboid_terms(points, h.rotation, h.translation, h.size, p, backend)
        mn = np.minimum(mn, hmn)
        mx = np.maximum(mx, hmx)
    return mn, mx


def score_from_state(mn, mx):
    """Occlusion-aware inlier score from running side-score extremes."""
    return _numpy_core.combined(mn, mx)


def hypothesis_gains(points, rotations, translations, sizes, state, p: "InlierParams",
                     workers: int = 1, backend=None) -> np.ndarray:
    """Inlier-count gain of adding each hypothesis to the model behind ``state``."""
    smin, smax = state
    return _impl(backend).hypothesis_gains(
        np.ascontiguousarray(points, dtype=float),
        np.ascontiguousarray(rotations, dtype=float),
        np.ascontiguousarray(translations, dtype=float),
        np.ascontiguousarray(sizes, dtype=float),
        np.ascontiguousarray(smin, dtype=float),
        np.ascontiguousarray(smax, dtype=float),
        *_param_args(p),
        int(workers),
    )


def oa_distances(points, cuboids: Sequence["Cuboid"], backend=None) -> np.ndarray:
    rot, trans, size = _pack(cuboids)
    return _impl(backend).oa_distances(np.ascontiguousarray(points, dtype=float), rot, trans, size)
