"""Compiled vs numpy kernels on a synthetic scene.

    python3 benchmarks/bench_kernels.py [--hypotheses 512] [--repeat 3]

Times hypothesis scoring (the per-round hot loop) and the batched minimal
solver, and checks that both backends agree.
"""
import argparse
import time

import numpy as np

from cuboidfit import kernels
from cuboidfit.inliers import InlierParams
from cuboidfit.robust import FitConfig, WeightMaps, generate_hypotheses
from cuboidfit.solver import fit_minimal_batch
from cuboidfit.synth import make_scene


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--hypotheses", type=int, default=512)
    ap.add_argument("--points", type=int, default=40000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if "compiled" not in kernels.available_backends():
        raise SystemExit("compiled kernels are not built; nothing to compare")
    scene = make_scene(3, np.random.default_rng(args.seed))
    Y = scene.points[::-(-len(scene.points) // args.points)]
    cfg = FitConfig(hypotheses_per_round=args.hypotheses, seed=args.seed)
    p = InlierParams()
    fits = generate_hypotheses(Y, WeightMaps.uniform(len(Y)), cfg)
    state = kernels.empty_state(len(Y))
    rng = np.random.default_rng(args.seed)
    S = Y[np.stack([rng.choice(len(Y), 6, replace=False) for _ in range(args.hypotheses)])]

    print(f"{len(Y)} points, {args.hypotheses} hypotheses, best of {args.repeat}")
    print(f"{'kernel':<22}{'compiled s':>12}{'numpy s':>12}{'speedup':>10}{'max |diff|':>14}")
    rows = {
        "hypothesis_gains": lambda b: kernels.hypothesis_gains(
            Y, fits.rotations, fits.translations, fits.sizes, state, p, backend=b),
        "minimal solver": lambda b: fit_minimal_batch(S, backend=b).loss,
    }
    for name, fn in rows.items():
        tc, outc = best_of(lambda: fn("compiled"), args.repeat)
        tn, outn = best_of(lambda: fn("numpy"), args.repeat)
        diff = float(np.nanmax(np.abs(outc - outn)))
        print(f"{name:<22}{tc:>12.3f}{tn:>12.3f}{tn / tc:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
