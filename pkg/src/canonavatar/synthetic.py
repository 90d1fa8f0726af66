"""Procedural rigged body for tests, demos and end-to-end checks.

The body is a smooth union of capsules around an A-pose skeleton, with the
pelvis at the origin. Skin weights fall off exponentially with the distance
to each part's bones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import GridSpec, _SDFField, evaluate_on_grid, extract_isosurface
from .mesh import TriMesh
from .rig import Joint, Pose, Rig, SkinWeightMatrix

JOINTS = [
    ("pelvis", None, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, 0.20, 0.0)),
    ("chest", 1, (0.0, 0.40, 0.0)),
    ("neck", 2, (0.0, 0.56, 0.0)),
    ("head", 3, (0.0, 0.66, 0.0)),
    ("l_shoulder", 2, (0.19, 0.47, 0.0)),
    ("l_elbow", 5, (0.38, 0.29, 0.0)),
    ("l_wrist", 6, (0.55, 0.12, 0.0)),
    ("r_shoulder", 2, (-0.19, 0.47, 0.0)),
    ("r_elbow", 8, (-0.38, 0.29, 0.0)),
    ("r_wrist", 9, (-0.55, 0.12, 0.0)),
    ("l_hip", 0, (0.10, -0.05, 0.0)),
    ("l_knee", 11, (0.12, -0.47, 0.0)),
    ("l_ankle", 12, (0.13, -0.87, 0.0)),
    ("r_hip", 0, (-0.10, -0.05, 0.0)),
    ("r_knee", 14, (-0.12, -0.47, 0.0)),
    ("r_ankle", 15, (-0.13, -0.87, 0.0)),
]

# (start, end, radius, part); end may be a joint index or an explicit point
BONES = [
    (0, 1, 0.12, 0),
    (1, 2, 0.13, 1),
    (2, 3, 0.06, 2),
    (2, 5, 0.07, 2),
    (2, 8, 0.07, 2),
    (4, (0.0, 0.76, 0.0), 0.09, 4),
    (3, 4, 0.05, 3),
    (5, 6, 0.05, 5),
    (6, 7, 0.042, 6),
    (7, (0.62, 0.05, 0.0), 0.035, 7),
    (8, 9, 0.05, 8),
    (9, 10, 0.042, 9),
    (10, (-0.62, 0.05, 0.0), 0.035, 10),
    (0, 11, 0.11, 0),
    (0, 14, 0.11, 0),
    (11, 12, 0.075, 11),
    (12, 13, 0.055, 12),
    (13, (0.13, -0.92, 0.08), 0.045, 13),
    (14, 15, 0.075, 14),
    (15, 16, 0.055, 15),
    (16, (-0.13, -0.92, 0.08), 0.045, 16),
]

BOUNDS = ((-0.8, -1.05, -0.3), (0.8, 0.95, 0.3))


def body_rig() -> Rig:
    return Rig([Joint(n, p, r) for n, p, r in JOINTS])


def _segments():
    rest = np.array([j[2] for j in JOINTS])
    a, b, r, part = [], [], [], []
    for s, e, rad, k in BONES:
        a.append(rest[s])
        b.append(rest[e] if isinstance(e, int) else np.asarray(e, dtype=np.float64))
        r.append(rad)
        part.append(k)
    return np.array(a), np.array(b), np.array(r), np.array(part)


def _segment_distance(p, a, b):
    """(N, S) distances from points to segments."""
    ab = b - a
    ap = p[:, None, :] - a[None]
    t = np.clip(np.einsum("nsj,sj->ns", ap, ab) / np.einsum("sj,sj->s", ab, ab), 0.0, 1.0)
    return np.linalg.norm(ap - t[..., None] * ab[None], axis=2)


class CapsuleBody(_SDFField):
    """Smooth union of capsules, optionally inflated by `offset` meters."""

    def __init__(self, offset: float = 0.0, blend: float = 0.03, sharpness: float = 0.01):
        self.a, self.b, self.r, self.part = _segments()
        self.offset = float(offset)
        self.blend = float(blend)
        self.sharpness = float(sharpness)

    def sdf(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(p))
        for s in range(0, len(p), 1 << 16):
            d = _segment_distance(p[s : s + (1 << 16)], self.a, self.b) - self.r
            # exponential smooth minimum
            k = self.blend
            m = d.min(axis=1)
            out[s : s + (1 << 16)] = m - k * np.log(np.exp(-(d - m[:, None]) / k).sum(axis=1))
        return out - self.offset


def body_weights(points, falloff: float = 0.02, prune: float = 1e-4) -> SkinWeightMatrix:
    """Skin weights from per-part distance to the skeleton segments."""
    a, b, _, part = _segments()
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = _segment_distance(p, a, b)
    n_parts = len(JOINTS)
    dpart = np.full((len(p), n_parts), np.inf)
    for k in range(n_parts):
        sel = part == k
        if sel.any():
            dpart[:, k] = d[:, sel].min(axis=1)
    logits = -(dpart - dpart.min(axis=1, keepdims=True)) / falloff
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    w[w < prune] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return SkinWeightMatrix(w)


def body_mesh(offset: float = 0.0, resolution: int = 96, colored: bool = False) -> TriMesh:
    lo, hi = np.asarray(BOUNDS[0]), np.asarray(BOUNDS[1])
    h = float((hi - lo).max()) / resolution
    res = np.ceil((hi - lo) / h).astype(int)
    spec = GridSpec(lo, lo + res * h, tuple(res))
    mesh = extract_isosurface(evaluate_on_grid(CapsuleBody(offset), spec).occupancy)
    if colored:
        v = mesh.vertices
        col = np.stack([0.5 + 0.4 * np.sin(6 * v[:, 1]), 0.5 + 0.4 * np.cos(5 * v[:, 0]), 0.5 + 0.3 * np.sin(4 * v[:, 2] + 1)], 1)
        mesh = TriMesh(mesh.vertices, mesh.faces, mesh.normals, np.clip(col, 0, 1))
    return mesh


def body_landmarks(n: int = 57) -> np.ndarray:
    """Joints followed by points spread along the bones, `n` in total."""
    rest = np.array([j[2] for j in JOINTS])
    if n <= len(rest):
        return rest[:n].copy()
    a, b, _, _ = _segments()
    extra = n - len(rest)
    seg = np.arange(extra) % len(a)
    t = (np.arange(extra) // len(a) + 1) / (extra // len(a) + 2)
    return np.concatenate([rest, a[seg] + t[:, None] * (b[seg] - a[seg])])


def demo_pose(strength: float = 1.0) -> Pose:
    """Arms lowered and bent, one knee bent, head turned."""
    rv = np.zeros((len(JOINTS), 3))
    rv[5] = (0.0, 0.0, -0.5)
    rv[6] = (0.0, -0.6, 0.0)
    rv[8] = (0.0, 0.0, 0.4)
    rv[9] = (0.7, 0.0, 0.0)
    rv[12] = (0.6, 0.0, 0.0)
    rv[11] = (-0.3, 0.0, 0.0)
    rv[4] = (0.0, 0.4, 0.0)
    rv[1] = (0.1, 0.0, 0.05)
    return Pose.from_rotvecs(strength * rv, root_translation=(0.0, 0.0, 0.0))


def pose_track(frames: int = 10) -> list:
    return [demo_pose(np.sin(np.pi * i / max(frames - 1, 1))) for i in range(frames)]


@dataclass
class SyntheticSubject:
    rig: Rig
    template: TriMesh  # canonical template
    weights: SkinWeightMatrix  # per template vertex
    landmarks: np.ndarray


def make_subject(resolution: int = 96) -> SyntheticSubject:
    template = body_mesh(0.0, resolution)
    return SyntheticSubject(body_rig(), template, body_weights(template.vertices), body_landmarks())
