"""Skeletal rig, forward kinematics and linear blend skinning.

Transforms are handled as (K, 4, 4) homogeneous matrices whose last row is
(0, 0, 0, 1). Quaternions are scalar-first (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import TriMesh

QUAT_TOL = 1e-6
COND_LIMIT = 1e8


class SkinningError(ValueError):
    """Raised when skinning inputs are inconsistent."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: Optional[int]
    rest_position: tuple


class Rig:
    """Kinematic tree of joints with rest-pose positions (meters)."""

    def __init__(self, joints: Sequence[Joint]):
        joints = [
            j if isinstance(j, Joint) else Joint(j["name"], j.get("parent"), tuple(j["rest_position"]))
            for j in joints
        ]
        if not joints:
            raise ValueError("rig needs at least one joint")
        n = len(joints)
        parents = np.array([-1 if j.parent is None else int(j.parent) for j in joints])
        if np.count_nonzero(parents < 0) != 1:
            raise ValueError("rig must have exactly one root joint")
        if np.any(parents >= n):
            raise ValueError("parent index out of range")
        rest = np.array([j.rest_position for j in joints], dtype=np.float64).reshape(n, 3)
        if not np.isfinite(rest).all():
            raise ValueError("rest positions must be finite")
        self.joints = list(joints)
        self.parents = parents
        self.rest_positions = rest
        self.order = self._topological_order()

    def _topological_order(self) -> np.ndarray:
        children = [[] for _ in self.joints]
        for i, p in enumerate(self.parents):
            if p >= 0:
                children[p].append(i)
        root = int(np.flatnonzero(self.parents < 0)[0])
        order, stack = [], [root]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(reversed(children[i]))
        if len(order) != len(self.joints):
            raise ValueError("joint parents contain a cycle")
        return np.array(order)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list:
        return [j.name for j in self.joints]

    def identity_pose(self) -> "Pose":
        return Pose.identity(self.n_joints)

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"name": j.name, "parent": None if p < 0 else int(p), "rest_position": [float(x) for x in r]}
                for j, p, r in zip(self.joints, self.parents, self.rest_positions)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rig":
        return cls(d["joints"])

    @classmethod
    def chain(cls, positions) -> "Rig":
        """Serial chain through the given rest positions (joint 0 is the root)."""
        positions = np.asarray(positions, dtype=np.float64)
        return cls(
            [Joint(f"j{i}", None if i == 0 else i - 1, tuple(p)) for i, p in enumerate(positions)]
        )


@dataclass
class Pose:
    """Per-joint rotations relative to the parent, plus a root translation."""

    rotations: np.ndarray  # (K, 4) unit quaternions, (w, x, y, z)
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_TOL):
            raise ValueError("pose rotations must be unit quaternions")

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1.0
        return cls(q)

    @classmethod
    def from_rotvecs(cls, rotvecs, root_translation=(0.0, 0.0, 0.0)) -> "Pose":
        q = Rotation.from_rotvec(np.asarray(rotvecs, dtype=np.float64).reshape(-1, 3)).as_quat(scalar_first=True)
        return cls(q, root_translation)

    @property
    def n_joints(self) -> int:
        return len(self.rotations)

    def to_dict(self) -> dict:
        return {
            "rotations": self.rotations.tolist(),
            "root_translation": self.root_translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(d["rotations"], d.get("root_translation", (0.0, 0.0, 0.0)))


class SkinWeightMatrix:
    """Per-point convex weights over body parts.

    Rows flagged unassigned are excluded from skinning and may hold anything.
    """

    def __init__(self, weights, assigned=None, atol: float = 1e-5):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must be (N, K)")
        assigned = np.ones(len(w), dtype=bool) if assigned is None else np.asarray(assigned, dtype=bool).copy()
        if assigned.shape != (len(w),):
            raise ValueError("assigned mask must have one entry per row")
        rows = w[assigned]
        if rows.size:
            if np.any(rows < -atol) or np.any(rows > 1 + atol):
                raise ValueError("skin weights must lie in [0, 1]")
            bad = np.abs(rows.sum(axis=1) - 1.0) > atol
            if bad.any():
                raise ValueError(f"{int(bad.sum())} skin weight rows do not sum to 1")
        self.weights = w
        self.assigned = assigned

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]

    @property
    def n_parts(self) -> int:
        return self.weights.shape[1]

    def dominant_part(self) -> np.ndarray:
        """Index of the largest weight per row, -1 for unassigned rows."""
        return np.where(self.assigned, np.argmax(self.weights, axis=1), -1)

    def subset(self, index) -> "SkinWeightMatrix":
        return SkinWeightMatrix(self.weights[index], self.assigned[index])

    @classmethod
    def one_hot(cls, parts, n_parts: int) -> "SkinWeightMatrix":
        parts = np.asarray(parts)
        w = np.zeros((len(parts), n_parts))
        w[np.arange(len(parts)), parts] = 1.0
        return cls(w)

    def to_dict(self, tol: float = 0.0) -> dict:
        rows = []
        for w, ok in zip(self.weights, self.assigned):
            if not ok:
                rows.append([])
                continue
            nz = np.flatnonzero(w > tol)
            rows.append([[int(k), float(w[k])] for k in nz])
        return {"num_parts": self.n_parts, "rows": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "SkinWeightMatrix":
        k = int(d["num_parts"])
        rows = d["rows"]
        w = np.zeros((len(rows), k))
        assigned = np.zeros(len(rows), dtype=bool)
        for i, row in enumerate(rows):
            for part, val in row:
                w[i, int(part)] = float(val)
            assigned[i] = len(row) > 0
        return cls(w, assigned)


def _check_pose(rig: Rig, pose: Pose):
    if pose.n_joints != rig.n_joints:
        raise ValueError(f"pose has {pose.n_joints} rotations, rig has {rig.n_joints} joints")
    norms = np.linalg.norm(pose.rotations, axis=1)
    if np.any(np.abs(norms - 1.0) > QUAT_TOL):
        raise ValueError("pose rotations must be unit quaternions")


def _translation(t) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = t
    return m


def forward_kinematics(rig: Rig, pose: Pose) -> np.ndarray:
    """Rest-pose corrected bone transforms.

    Returns
    -------
    (K, 4, 4) array; G[k] maps rest-pose space to posed space for part k,
    so the identity pose maps every part to itself.
    """
    _check_pose(rig, pose)
    rots = Rotation.from_quat(pose.rotations, scalar_first=True).as_matrix()
    world = np.empty((rig.n_joints, 4, 4))
    rest = rig.rest_positions
    for k in rig.order:
        local = np.eye(4)
        local[:3, :3] = rots[k]
        p = rig.parents[k]
        if p < 0:
            local[:3, 3] = rest[k] + pose.root_translation
            world[k] = local
        else:
            local[:3, 3] = rest[k] - rest[p]
            world[k] = world[p] @ local
    g = world.copy()
    # right-multiply by the inverse rest transform, a pure translation by -rest
    g[:, :3, 3] -= np.einsum("kij,kj->ki", world[:, :3, :3], rest)
    return g


def joint_positions(rig: Rig, pose: Pose) -> np.ndarray:
    """Posed world positions of the joints."""
    g = forward_kinematics(rig, pose)
    return np.einsum("kij,kj->ki", g[:, :3, :3], rig.rest_positions) + g[:, :3, 3]


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("points must be (N, 3)")
    return p


def _check_weights(points, weights: SkinWeightMatrix, transforms):
    if weights.n_points != len(points):
        raise SkinningError(f"{weights.n_points} weight rows for {len(points)} points")
    if weights.n_parts != len(transforms):
        raise SkinningError(f"{weights.n_parts} weight columns for {len(transforms)} bone transforms")


def _blend_offsets(weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    # blend G_k - I instead of G_k: identity bones contribute exactly zero and
    # rows summing to 1 only within tolerance do not rescale the point
    d = np.asarray(transforms, dtype=np.float64)[:, :3, :].copy()
    d[:, :, :3] -= np.eye(3)
    return np.tensordot(weights, d, axes=([1], [0]))


def blend_transforms(weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Per-row blended affine transforms, (N, 3, 4)."""
    m = _blend_offsets(weights, transforms)
    m[:, :, :3] += np.eye(3)
    return m


def lbs_apply(points, weights: SkinWeightMatrix, transforms) -> np.ndarray:
    """Linear blend skinning: v' = sum_k w_k G_k v."""
    p = _as_points(points)
    _check_weights(p, weights, transforms)
    if not weights.assigned.all():
        raise SkinningError(f"{int((~weights.assigned).sum())} points have unassigned weights")
    d = _blend_offsets(weights.weights, transforms)
    return p + (np.einsum("nij,nj->ni", d[:, :, :3], p) + d[:, :, 3])


@dataclass
class InverseSkinningResult:
    points: np.ndarray  # (N, 3); unresolved rows hold the input point
    valid: np.ndarray  # (N,) bool
    condition: np.ndarray  # (N,) condition number of the blended linear part


def lbs_invert(points, weights: SkinWeightMatrix, transforms, cond_limit: float = COND_LIMIT) -> InverseSkinningResult:
    """Exact inverse of the per-point blended skinning transform.

    Points whose blended transform has condition number above `cond_limit`, or
    whose weight row is unassigned, pass through unchanged and are flagged.
    """
    p = _as_points(points)
    _check_weights(p, weights, transforms)
    m = blend_transforms(weights.weights, transforms)
    lin = m[:, :, :3]
    cond = np.full(len(p), np.inf)
    if len(p):
        cond = np.linalg.cond(lin)
    ok = weights.assigned & np.isfinite(cond) & (cond <= cond_limit)
    out = p.copy()
    if ok.any():
        rhs = (p[ok] - m[ok, :, 3])[..., None]
        out[ok] = np.linalg.solve(lin[ok], rhs)[..., 0]
    return InverseSkinningResult(out, ok, cond)


def repose_mesh(mesh: TriMesh, weights: SkinWeightMatrix, rig: Rig, pose: Pose) -> TriMesh:
    """Skin a rest-pose mesh into `pose`; normals are recomputed from the result."""
    g = forward_kinematics(rig, pose)
    return mesh.with_vertices(lbs_apply(mesh.vertices, weights, g)).with_normals()


def animate(mesh: TriMesh, weights: SkinWeightMatrix, rig: Rig, poses: Sequence[Pose]) -> list:
    """One reposed mesh per pose."""
    return [repose_mesh(mesh, weights, rig, pose) for pose in poses]
