"""Sequential RANSAC over cuboid hypotheses with occlusion-aware scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .geometry import Cuboid
from .inliers import InlierParams
from .solver import SolverOptions, fit_minimal_batch


class SamplingError(ValueError):
    """A weight map cannot supply a minimal set."""


@dataclass(frozen=True)
class WeightMaps:
    """``Q`` per-point sampling distributions and the probabilities ``q`` of picking each."""

    maps: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        maps = np.atleast_2d(np.asarray(self.maps, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if len(q) != len(maps):
            raise ValueError(f"{len(maps)} maps but {len(q)} selection weights")
        if np.any(maps < 0) or not np.all(np.isfinite(maps)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ValueError("selection weights must be nonnegative and sum to 1")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, n: int) -> "WeightMaps":
        return cls(np.ones((1, n)), np.ones(1))

    @property
    def n_points(self) -> int:
        return self.maps.shape[1]

    def masked(self, keep) -> "WeightMaps":
        """Zero the weights of points outside ``keep``."""
        return WeightMaps(self.maps * np.asarray(keep, dtype=float), self.q)


@dataclass(frozen=True)
class FitConfig:
    """Settings of :func:`fit_scene`.

    ``exclude_explained`` removes points that are already inliers of the
    current model from the sampling distribution, so later rounds draw their
    minimal sets from the unexplained part of the scene. ``workers`` only
    affects speed; results are identical for any value.
    """

    minimal_set_size: int = 6
    hypotheses_per_round: int = 4096
    max_cuboids: int = 8
    stopping_theta: float | None = None
    seed: int = 0
    inlier: InlierParams = field(default_factory=InlierParams)
    solver: SolverOptions = field(default_factory=SolverOptions)
    exclude_explained: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.minimal_set_size < 6:
            raise ValueError("minimal sets need at least 6 points")
        if self.hypotheses_per_round < 1 or self.max_cuboids < 1:
            raise ValueError("hypotheses_per_round and max_cuboids must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Hypothesis:
    cuboid: Cuboid
    inlier_gain: float
    index: int = 0


@dataclass
class RoundInfo:
    round: int
    gain: float
    theta: float
    accepted: bool
    cuboid: Cuboid

    def to_dict(self) -> dict:
        return {"round": self.round, "gain": self.gain, "theta": self.theta,
                "accepted": self.accepted, "cuboid": self.cuboid.to_dict()}


@dataclass
class SceneFit:
    cuboids: list
    rounds: list


def stopping_threshold(n: int, cfg: FitConfig | None = None) -> float:
    """Minimum inlier gain for accepting another cuboid, ``9 ln n`` by default."""
    if cfg is not None and cfg.stopping_theta is not None:
        return float(cfg.stopping_theta)
    if n < 1:
        raise ValueError("need at least one point")
    return 9.0 * math.log(n)


def hypothesis_rng(seed: int, round_index: int, hyp_index: int) -> np.random.Generator:
    """Independent stream per hypothesis, so results do not depend on scheduling."""
    return np.random.default_rng([seed, round_index, hyp_index])


class _Sampler:
    """Two-stage sampler: pick a map by ``q``, then ``C`` distinct points by its weights."""

    def __init__(self, W: WeightMaps, C: int):
        self.C = C
        self.q = W.q
        self.cdf = np.cumsum(W.maps, axis=1)
        self.nonzero = np.count_nonzero(W.maps, axis=1)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.choice(len(self.q), p=self.q)) if len(self.q) > 1 else 0
        if self.nonzero[k] < self.C:
            raise SamplingError(
                f"weight map {k} has {self.nonzero[k]} nonzero entries, fewer than {self.C}")
        cdf = self.cdf[k]
        total = cdf[-1]
        picked: list[int] = []
        while len(picked) < self.C:
            u = rng.random(self.C - len(picked)) * total
            for i in np.searchsorted(cdf, u, side="right"):
                if i < len(cdf) and i not in picked and len(picked) < self.C:
                    picked.append(int(i))
        return np.array(picked)


def sample_minimal_set(W: WeightMaps, C: int, rng: np.random.Generator) -> np.ndarray:
    """``C`` distinct point indices from the two-stage weighted distribution."""
    return _Sampler(W, C).draw(rng)


def _state_of(Y, M, p):
    return kernels.model_state(Y, M, p)


def generate_hypotheses(Y, W: WeightMaps, cfg: FitConfig, round_index: int = 0):
    """Sample and fit ``|H|`` minimal sets; returns the batched solver output."""
    sampler = _Sampler(W, cfg.minimal_set_size)
    idx = np.stack([sampler.draw(hypothesis_rng(cfg.seed, round_index, i))
                    for i in range(cfg.hypotheses_per_round)])
    return fit_minimal_batch(Y[idx], cfg.solver, workers=cfg.workers)


def score_hypotheses(Y, fits, state, cfg: FitConfig) -> np.ndarray:
    """Inlier gain of each fitted hypothesis; unusable fits get ``-inf``."""
    gains = kernels.hypothesis_gains(Y, fits.rotations, fits.translations, fits.sizes, state,
                                     cfg.inlier, workers=cfg.workers)
    return np.where(fits.finite & np.isfinite(gains), gains, -np.inf)


def select_hypothesis(gains) -> int:
    """Index of the largest gain; the lowest index wins ties."""
    gains = np.asarray(gains, dtype=float)
    if len(gains) == 0 or not np.any(gains > -np.inf):
        raise RuntimeError("every hypothesis in the round is degenerate")
    return int(np.argmax(gains))


def generate_and_select(Y, M: Sequence[Cuboid], W: WeightMaps | None, cfg: FitConfig,
                        round_index: int = 0, state=None) -> Hypothesis:
    """Best hypothesis of one round, measured by the gain in occlusion-aware inliers."""
    Y = np.ascontiguousarray(Y, dtype=float)
    if len(Y) < cfg.minimal_set_size:
        raise ValueError(f"need at least {cfg.minimal_set_size} points, got {len(Y)}")
    W = W if W is not None else WeightMaps.uniform(len(Y))
    if W.n_points != len(Y):
        raise ValueError("weight maps do not match the point count")
    if state is None:
        state = _state_of(Y, M, cfg.inlier)
    fits = generate_hypotheses(Y, W, cfg, round_index)
    gains = score_hypotheses(Y, fits, state, cfg)
    best = select_hypothesis(gains)
    return Hypothesis(fits.cuboid(best), float(gains[best]), best)


def _sampling_weights(W: WeightMaps, state, C: int) -> WeightMaps:
    unexplained = kernels.score_from_state(*state) < 0.5
    masked = W.masked(unexplained)
    if np.all(np.count_nonzero(masked.maps, axis=1)[W.q > 0] >= C):
        return masked
    return W


def fit_scene(Y, W: WeightMaps | None = None, cfg: FitConfig | None = None,
              on_round: Callable[[RoundInfo], None] | None = None) -> SceneFit:
    """Greedily add the best cuboid per round while it gains more than Θ inliers."""
    cfg = cfg or FitConfig()
    Y = np.ascontiguousarray(Y, dtype=float).reshape(-1, 3)
    if len(Y) == 0:
        raise ValueError("empty point cloud")
    W = W if W is not None else WeightMaps.uniform(len(Y))
    theta = stopping_threshold(len(Y), cfg)
    M: list[Cuboid] = []
    rounds: list[RoundInfo] = []
    state = kernels.empty_state(len(Y))
    while len(M) < cfg.max_cuboids:
        Wr = _sampling_weights(W, state, cfg.minimal_set_size) if cfg.exclude_explained else W
        hyp = generate_and_select(Y, M, Wr, cfg, round_index=len(rounds), state=state)
        info = RoundInfo(len(rounds), hyp.inlier_gain, theta, hyp.inlier_gain > theta, hyp.cuboid)
        rounds.append(info)
        if on_round is not None:
            on_round(info)
        if not info.accepted:
            break
        M.append(hyp.cuboid)
        h = hyp.cuboid
        mn, mx = kernels.cuboid_terms(Y, h.rotation, h.translation, h.size, cfg.inlier)
        state = (np.minimum(state[0], mn), np.maximum(state[1], mx))
    return SceneFit(M, rounds)
