"""Near-isometric extension, alignment and equidistribution toolkit."""

from .correspondence import (
    Correspondence,
    GraphBacktrack,
    TenStep,
    ToleranceModel,
    align_after_match,
    correspondence_search,
    distance_multiset_compare,
    heron_area,
    quad_area,
    quad_area_tables,
    triangle_area_tables,
)
from .equidistribution import (
    Sphere,
    Torus,
    config_metrics,
    design_test,
    finite_field_count,
    finite_field_sphere,
    optimize_config,
    riesz_energy,
    scaling_check,
)
from .errors import NearIsometryError
from .finite_extension import extend_finite, extend_with_properness, glue, pigeonhole_partition, scaled_clustering
from .geometry import PointConfig, max_simplex_volume, minimax_affine_on_simplex, simplex_volume
from .maps import (
    Ball,
    Box,
    SmoothMap,
    bmo_rotation_audit,
    distortion_audit,
    localize_motion,
    localize_rotation,
    map_from_dict,
    point_mover,
    slide,
    slow_twist,
)
from .procrustes import EuclideanMotion, classify_eta_block, fit_euclidean_motion, fit_near_reflection, orthogonal_procrustes
from .whitney import BallSet, check_admissible, whitney_cubes, whitney_extend

__version__ = "0.1.0"
