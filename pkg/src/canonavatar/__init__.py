"""Canonical-space avatar reconstruction toolkit.

Skinning and inverse skinning, semantic deformation into a canonical frame,
occupancy fields and isosurface extraction, a soft sphere-splatting renderer
with analytic gradients, render-and-compare refinement, and evaluation metrics.
"""

from .mesh import TriMesh
from .rig import Joint, Pose, Rig, SkinWeightMatrix, SkinningError, forward_kinematics, lbs_apply, lbs_invert, repose_mesh
from .semspace import FeatureKind, assign_skin_weights, semdf_to_canonical, spatial_features
from .field import AnalyticBox, AnalyticSphere, GridSpec, MeshSDFField, ScalarGrid, evaluate_on_grid, extract_isosurface
from .render import OrthoCamera, RenderSettings, SphereCloud, render, render_backward
from .refine import RefineConfig, RenderTarget, refine_cloud
from .metrics import chamfer, evaluate, normal_reprojection_error, p2s
from .estimators import LBSTransformer, RenderAndCompareRefiner, SemanticDeformationField, SpatialFeatureEncoder

__version__ = "0.1.0"

__all__ = [
    "TriMesh", "Joint", "Pose", "Rig", "SkinWeightMatrix", "SkinningError",
    "forward_kinematics", "lbs_apply", "lbs_invert", "repose_mesh",
    "FeatureKind", "assign_skin_weights", "semdf_to_canonical", "spatial_features",
    "AnalyticBox", "AnalyticSphere", "GridSpec", "MeshSDFField", "ScalarGrid", "evaluate_on_grid", "extract_isosurface",
    "OrthoCamera", "RenderSettings", "SphereCloud", "render", "render_backward",
    "RefineConfig", "RenderTarget", "refine_cloud",
    "chamfer", "evaluate", "normal_reprojection_error", "p2s",
    "LBSTransformer", "RenderAndCompareRefiner", "SemanticDeformationField", "SpatialFeatureEncoder",
]
