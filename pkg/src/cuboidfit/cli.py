"""Command-line interface: ``cuboidfit {fit,eval,synth,render,grad-check}``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .em import EMConfig, EMError, em_refine
from .inliers import InlierParams
from .io import (Intrinsics, backproject, canonical_json, export_obj, load_depth,
                 load_intrinsics, load_primitives, load_weight_maps, save_depth,
                 save_intrinsics, save_pgm, save_primitives)
from .metrics import DEFAULT_BOUNDS, evaluate
from .robust import FitConfig, SamplingError, WeightMaps, fit_scene
from .solver import DegenerateConfiguration, SolverError
from .synth import make_scene, render_depth

log = logging.getLogger("cuboidfit")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _subsample_stride(n: int, max_points: int | None) -> int:
    if not max_points or n <= max_points:
        return 1
    return -(-n // max_points)


def cmd_fit(args) -> int:
    depth = load_depth(args.depth)
    K = load_intrinsics(args.intrinsics)
    depth.check(K)
    Y, pixel = backproject(depth, K)
    if len(Y) < args.mss:
        raise InputError(f"depth map has {len(Y)} valid pixels, fewer than the minimal set size")
    stride = _subsample_stride(len(Y), args.max_points)
    if args.weights:
        full = load_weight_maps(args.weights, len(Y), pixel, (K.height, K.width))
        W = WeightMaps(full.maps[:, ::stride], full.q)
    else:
        W = None
    Y, pixel = Y[::stride], pixel[::stride]
    log.info("fitting %d points (stride %d)", len(Y), stride)

    inlier = InlierParams(tau=args.tau, beta=args.beta, tau_c=args.tau_c_mult * args.tau)
    cfg = FitConfig(minimal_set_size=args.mss, hypotheses_per_round=args.hypotheses,
                    max_cuboids=args.max_cuboids, stopping_theta=args.theta, seed=args.seed,
                    inlier=inlier, workers=args.workers)

    diag = open(args.diag, "w") if args.diag else None
    try:
        def on_round(info):
            log.info("round %d: gain %.2f (theta %.2f) %s", info.round, info.gain, info.theta,
                     "accepted" if info.accepted else "stop")
            if diag is not None:
                diag.write(canonical_json(info.to_dict()))

        M = fit_scene(Y, W, cfg, on_round=on_round).cuboids
    finally:
        if diag is not None:
            diag.close()

    if args.refine_em and M:
        # refine on the points the model already explains
        mn, mx = kernels.model_state(Y, M, inlier)
        explained = kernels.score_from_state(mn, mx) >= 0.5
        if explained.any():
            M = em_refine(Y[explained], M, EMConfig(sigma=math.sqrt(args.tau)))

    save_primitives(args.out, M)
    if args.mesh:
        export_obj(M, args.mesh)
    print(f"{len(M)} cuboids written to {args.out}")
    return EXIT_OK


def _parse_bounds(text: str):
    try:
        bounds = tuple(float(b) for b in text.split(","))
    except ValueError as err:
        raise InputError(f"bad --bounds {text!r}") from err
    if not bounds or any(not b > 0 for b in bounds):
        raise InputError("bounds must be positive")
    return bounds


def cmd_eval(args) -> int:
    depth = load_depth(args.depth)
    K = load_intrinsics(args.intrinsics)
    _, M = load_primitives(args.primitives, args.family)
    report = evaluate(depth, K, M, _parse_bounds(args.bounds))
    Path(args.report).write_text(report.to_json())
    if args.mask:
        from .metrics import coverage
        save_pgm(args.mask, coverage(depth, K, M)[1])
    print(f"primitives {report.num_primitives}  coverage {report.coverage_percent:.2f}%  "
          f"OA-L2 all {report.mean_oa_all:.4f}  covered {report.mean_oa_covered:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    K = Intrinsics.default(args.width, args.height)
    scene = make_scene(args.k, np.random.default_rng(args.seed), K, depth_noise=args.noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_depth(out / "depth.pfm", scene.depth)
    save_intrinsics(out / "intrinsics.json", K)
    save_primitives(out / "cuboids.json", scene.cuboids)
    print(f"scene with {args.k} cuboids and {len(scene.points)} points written to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    family, M = load_primitives(args.primitives)
    if family != "cuboid":
        raise InputError("only cuboids can be rendered")
    K = load_intrinsics(args.intrinsics)
    save_depth(args.out, render_depth(M, K))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_grad_check

    rows, summary = run_grad_check(args.trials, args.seed, args.step)
    for row in rows:
        print(canonical_json(row), end="")
    print(canonical_json({"summary": summary}), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cuboidfit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="abstract a depth map into cuboids")
    f.add_argument("--depth", required=True)
    f.add_argument("--intrinsics", required=True)
    f.add_argument("--weights")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--hypotheses", type=int, default=4096)
    f.add_argument("--tau", type=float, default=0.004)
    f.add_argument("--tau-c-mult", type=float, default=2.0)
    f.add_argument("--beta", type=float, default=5.0)
    f.add_argument("--mss", type=int, default=6)
    f.add_argument("--max-cuboids", type=int, default=8)
    f.add_argument("--theta", type=float)
    f.add_argument("--refine-em", action="store_true")
    f.add_argument("--max-points", type=int, default=40000,
                   help="uniform-stride subsampling budget (0 keeps every point)")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", required=True)
    f.add_argument("--mesh")
    f.add_argument("--diag")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score primitives against a depth map")
    e.add_argument("--depth", required=True)
    e.add_argument("--intrinsics", required=True)
    e.add_argument("--primitives", required=True)
    e.add_argument("--family", choices=("cuboid", "superquadric"))
    e.add_argument("--bounds", default=",".join(f"{b:.2f}" for b in DEFAULT_BOUNDS))
    e.add_argument("--report", required=True)
    e.add_argument("--mask")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="render a random cuboid scene")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=640)
    s.add_argument("--height", type=int, default=480)
    s.add_argument("--noise", type=float, default=0.0, help="depth noise std (m)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("render", help="ray-cast a depth map of cuboids")
    r.add_argument("--primitives", required=True)
    r.add_argument("--intrinsics", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    g = sub.add_parser("grad-check", help="compare the solver Jacobian with finite differences")
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--step", type=float, default=1e-4)
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    # numerical errors first: DegenerateConfiguration is also a ValueError
    except (SolverError, DegenerateConfiguration, EMError, ArithmeticError,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, SamplingError, OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
