"""Occlusion-aware cuboid abstraction of depth maps."""
from .geometry import (Cuboid, canonical_surface_discrepancy, occludes, occlusion_aware_distance,
                       occlusion_distance, point_to_cuboid_distance, point_to_side_distance)
from .inliers import InlierParams, inlier_count, leaky_occlusion, occlusion_aware_inlier, soft_inlier
from .io import DepthMap, Intrinsics, backproject, load_depth, save_depth
from .kernels import BACKEND
from .metrics import EvalReport, auc, coverage, evaluate
from .robust import FitConfig, WeightMaps, fit_scene, generate_and_select, stopping_threshold
from .solver import DegenerateConfiguration, SolverError, SolverOptions, fit_minimal, solver_jacobian
from .superquadric import Superquadric, sq_oa_distance

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Cuboid", "DegenerateConfiguration", "DepthMap", "EvalReport", "FitConfig",
    "InlierParams", "Intrinsics", "SolverError", "SolverOptions", "Superquadric", "WeightMaps",
    "auc", "backproject", "canonical_surface_discrepancy", "coverage", "evaluate", "fit_minimal",
    "fit_scene", "generate_and_select", "inlier_count", "leaky_occlusion", "load_depth",
    "occludes", "occlusion_aware_distance", "occlusion_aware_inlier", "occlusion_distance",
    "point_to_cuboid_distance", "point_to_side_distance", "save_depth", "solver_jacobian",
    "soft_inlier", "sq_oa_distance", "stopping_threshold",
]
