"""Numerical laboratory for linear cocycles over hyperbolic toral automorphisms."""

from .base_dynamics import ToralAutomorphism, cat_map, closing_shadow, orbit, periodic_points
from .cocycles import cocycle_from_dict, compose, evaluate, holder_estimate
from .conformal_geometry import circumcenter, dist, normalize, pullback
from .errors import CocycleLabError
from .invariant_structures import (adapted_metric, holonomy_limit, livsic_solve,
                                   recover_invariant_structure, renormalize_to_isometry)
from .spectral import lyapunov_extremes, periodic_scan, qc_distortion

__version__ = "0.1.0"

__all__ = [
    "ToralAutomorphism", "cat_map", "closing_shadow", "orbit", "periodic_points",
    "cocycle_from_dict", "compose", "evaluate", "holder_estimate",
    "circumcenter", "dist", "normalize", "pullback", "CocycleLabError",
    "adapted_metric", "holonomy_limit", "livsic_solve", "recover_invariant_structure",
    "renormalize_to_isometry", "lyapunov_extremes", "periodic_scan", "qc_distortion",
]
