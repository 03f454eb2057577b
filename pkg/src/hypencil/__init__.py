"""Toolkit for certifying almost-isometric embeddings of hyperbolic space.

The library builds geodesic metric targets (exact hyperbolic spaces and
shortest-path meshes over warped products), maps hyperbolic space into them
along pencils of forward-asymptotic geodesics, and produces machine-checked
certificates |d_X(F p, F q) - d_H(p, q)| <= K.
"""

from .hyperbolic import (
    HPoint,
    VerticalGeodesic,
    VerticalTriangle,
    SampledGeodesic,
    dist_hyp,
    distance_arrays,
    midpoint_height,
    vertical_triangle,
    sample_geodesic,
    sample_third_side,
    vertical_line_distance,
)
from .spaces import (
    TargetSpace,
    ExactHyperbolicSpace,
    MeshSpace,
    StarSpace,
    MeshUnreachableError,
    exact_hyperbolic_target,
    mesh_distance,
    mesh_geodesic,
    mesh_to_json,
    mesh_from_json,
)
from .models import (
    SquareTiledSurface,
    Leaf,
    PencilEmbedding,
    WarpedPlaneTarget,
    WarpedCoverTarget,
    staircase_surface,
    warped_plane_target,
    warped_cover_target,
    euclidean_plane_target,
    pencil_embedding,
    identity_embedding,
    constant_embedding,
)
from .certify import (
    HypothesisEstimates,
    Certificate,
    GridBundle,
    CertificationError,
    estimate_delta,
    estimate_eps_R,
    check_divergence,
    displaced_height,
    estimate_C0,
    compute_K,
    verify_almost_isometry,
    hyperbolicity_probe,
    certify_embedding,
    default_grids,
)

__version__ = "0.1.0"

__all__ = [
    "HPoint",
    "VerticalGeodesic",
    "VerticalTriangle",
    "SampledGeodesic",
    "dist_hyp",
    "distance_arrays",
    "midpoint_height",
    "vertical_triangle",
    "sample_geodesic",
    "sample_third_side",
    "vertical_line_distance",
    "TargetSpace",
    "ExactHyperbolicSpace",
    "MeshSpace",
    "StarSpace",
    "MeshUnreachableError",
    "exact_hyperbolic_target",
    "mesh_distance",
    "mesh_geodesic",
    "mesh_to_json",
    "mesh_from_json",
    "SquareTiledSurface",
    "Leaf",
    "PencilEmbedding",
    "WarpedPlaneTarget",
    "WarpedCoverTarget",
    "staircase_surface",
    "warped_plane_target",
    "warped_cover_target",
    "euclidean_plane_target",
    "pencil_embedding",
    "identity_embedding",
    "constant_embedding",
    "HypothesisEstimates",
    "Certificate",
    "GridBundle",
    "CertificationError",
    "estimate_delta",
    "estimate_eps_R",
    "check_divergence",
    "displaced_height",
    "estimate_C0",
    "compute_K",
    "verify_almost_isometry",
    "hyperbolicity_probe",
    "certify_embedding",
    "default_grids",
]
