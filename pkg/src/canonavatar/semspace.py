"""Skinning weights for arbitrary points, pose normalization, spatial features."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import SurfaceIndex
from .mesh import TriMesh
from .rig import Pose, Rig, SkinWeightMatrix, forward_kinematics, lbs_invert

DEFAULT_CUTOFF = 0.10
N_LANDMARKS = 57


@dataclass
class SemanticPointSet:
    """Points with skinning weights over body parts.

    Attributes
    ----------
    positions : (N, 3)
    weights : SkinWeightMatrix
        Unassigned rows are all zero.
    distance : (N,) distance to the template surface used for assignment
    """

    positions: np.ndarray
    weights: SkinWeightMatrix
    distance: np.ndarray

    @property
    def assigned(self) -> np.ndarray:
        return self.weights.assigned

    def __len__(self):
        return len(self.positions)


def assign_skin_weights(
    points,
    template: TriMesh,
    template_weights: SkinWeightMatrix,
    cutoff: float = DEFAULT_CUTOFF,
    index: SurfaceIndex | None = None,
) -> SemanticPointSet:
    """Copy weights from the closest template surface point.

    The three vertex weight rows of the closest triangle are blended with the
    closest point's barycentric coordinates. Points farther than `cutoff`, or
    whose closest triangle touches an unassigned vertex, come back unassigned.
    """
    if template.is_empty:
        raise ValueError("empty template mesh")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if template_weights.n_points != template.n_vertices:
        raise ValueError("template weights must have one row per template vertex")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    index = index if index is not None else SurfaceIndex(template)
    hit = index.query(pts, max_distance=cutoff)
    ok = hit.face >= 0
    w = np.zeros((len(pts), template_weights.n_parts))
    if ok.any():
        corners = template.faces[hit.face[ok]]
        ok_rows = template_weights.assigned[corners].all(axis=1)
        w_ok = np.einsum("nk,nkj->nj", hit.bary[ok], template_weights.weights[corners])
        idx = np.flatnonzero(ok)
        ok[idx[~ok_rows]] = False
        w[idx[ok_rows]] = w_ok[ok_rows]
    # clear rounding so rows stay convex
    w = np.clip(w, 0.0, 1.0)
    sums = w.sum(axis=1, keepdims=True)
    np.divide(w, sums, out=w, where=ok[:, None] & (sums > 0))
    return SemanticPointSet(pts.copy(), SkinWeightMatrix(w, ok), hit.distance)


def semdf_to_canonical(
    points,
    posed_template: TriMesh,
    template_weights: SkinWeightMatrix,
    rig: Rig,
    pose: Pose,
    cutoff: float = DEFAULT_CUTOFF,
    index: SurfaceIndex | None = None,
) -> SemanticPointSet:
    """Map posed-space points into the canonical (rest-pose) frame.

    Weights are looked up on the posed template, then the per-point blended
    skinning transform is inverted. Unassigned or singular points keep their
    input position and are flagged unassigned.
    """
    sem = assign_skin_weights(points, posed_template, template_weights, cutoff, index)
    g = forward_kinematics(rig, pose)
    inv = lbs_invert(sem.positions, sem.weights, g)
    flags = sem.assigned & inv.valid
    w = sem.weights.weights.copy()
    w[~flags] = 0.0
    return SemanticPointSet(inv.points, SkinWeightMatrix(w, flags), sem.distance)


# ---------------------------------------------------------------------------
# spatial features


class FeatureKind(str, Enum):
    XYZ = "xyz"
    L2 = "l2"
    RBF = "rbf"
    RBF_PER_AXIS = "rbf_per_axis"


def feature_dim(kind, n_landmarks: int) -> int:
    kind = FeatureKind(kind)
    return {
        FeatureKind.XYZ: 3,
        FeatureKind.L2: n_landmarks,
        FeatureKind.RBF: n_landmarks,
        FeatureKind.RBF_PER_AXIS: 3 * n_landmarks,
    }[kind]


def check_landmarks(landmarks) -> np.ndarray:
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.ndim != 2 or lm.shape[1] != 3 or len(lm) < 1:
        raise ValueError("landmarks must be a non-empty (N_L, 3) array")
    if not np.isfinite(lm).all():
        raise ValueError("landmarks must be finite")
    return lm


def spatial_features(points, landmarks, kind=FeatureKind.RBF_PER_AXIS, length_scale: float = 1.0) -> np.ndarray:
    """Encode points relative to body landmarks.

    Distances are in meters and divided by `length_scale` before the
    exponential, so the RBF variants depend on the unit system.

    Returns
    -------
    (N, D) array, D = 3 for xyz, N_L for l2/rbf, 3 * N_L for rbf_per_axis.
    The per-axis layout is landmark-major: column 3*i + a is axis a of landmark i.
    """
    kind = FeatureKind(kind)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lm = check_landmarks(landmarks)
    if kind is FeatureKind.XYZ:
        return p.copy()
    diff = p[:, None, :] - lm[None, :, :]
    if kind is FeatureKind.RBF_PER_AXIS:
        return np.exp(-np.abs(diff) / length_scale).reshape(len(p), -1)
    dist = np.linalg.norm(diff, axis=2)
    if kind is FeatureKind.L2:
        return dist
    return np.exp(-dist / length_scale)


def spatial_feature(p, landmarks, kind=FeatureKind.RBF_PER_AXIS, length_scale: float = 1.0) -> np.ndarray:
    """Feature vector of a single point."""
    return spatial_features(np.asarray(p, dtype=np.float64).reshape(1, 3), landmarks, kind, length_scale)[0]
