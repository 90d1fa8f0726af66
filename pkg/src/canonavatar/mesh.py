"""Indexed triangle meshes and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) float array, meters
    faces : (F, 3) int array of vertex indices
    normals : (V, 3) float array, optional
        Per-vertex unit normals. Computed from geometry when omitted.
    colors : (V, 3) float array in [0, 1], optional
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    _face_normals: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if n.shape != v.shape:
                raise ValueError("normals must match vertices")
            object.__setattr__(self, "normals", n)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if c.shape != v.shape:
                raise ValueError("colors must match vertices")
            object.__setattr__(self, "colors", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return self.n_faces == 0

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        t = self.triangles
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def face_normals(self) -> np.ndarray:
        cr = self.face_cross()
        ln = np.linalg.norm(cr, axis=1, keepdims=True)
        return np.divide(cr, ln, out=np.zeros_like(cr), where=ln > 0)

    def vertex_normals(self) -> np.ndarray:
        """Stored normals, or area-weighted face normals accumulated per vertex."""
        if self.normals is not None:
            return self.normals
        return compute_vertex_normals(self.vertices, self.faces)

    def signed_volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def edges(self) -> np.ndarray:
        """Undirected edges, one row per face corner pair, sorted per row."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.sort(e, axis=1)

    def boundary_edge_count(self) -> int:
        """Number of undirected edges not shared by exactly two faces."""
        if self.is_empty:
            return 0
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return int(np.count_nonzero(counts != 2))

    def is_watertight(self) -> bool:
        return not self.is_empty and self.boundary_edge_count() == 0

    def with_vertices(self, vertices, recompute_normals: bool = True) -> "TriMesh":
        normals = None if recompute_normals else self.normals
        return replace(self, vertices=np.asarray(vertices, dtype=np.float64), normals=normals)

    def with_normals(self) -> "TriMesh":
        """Copy with explicit normals recomputed from geometry."""
        return replace(self, normals=compute_vertex_normals(self.vertices, self.faces))

    def submesh(self, face_mask) -> "TriMesh":
        """Keep only the selected faces; vertex arrays are untouched."""
        return replace(self, faces=self.faces[np.asarray(face_mask, dtype=bool)])

    def remove_unreferenced(self) -> tuple["TriMesh", np.ndarray]:
        """Drop unused vertices. Returns the new mesh and old->new index map (-1 for removed)."""
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.faces.ravel()] = True
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(np.count_nonzero(used))
        mesh = TriMesh(
            self.vertices[used],
            remap[self.faces],
            None if self.normals is None else self.normals[used],
            None if self.colors is None else self.colors[used],
        )
        return mesh, remap

    def translated(self, offset) -> "TriMesh":
        return replace(self, vertices=self.vertices + np.asarray(offset, dtype=np.float64))


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    acc = np.zeros_like(vertices)
    if len(faces):
        t = vertices[faces]
        cr = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        for corner in range(3):
            np.add.at(acc, faces[:, corner], cr)
    ln = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.zeros_like(acc)
    out[:, 2] = 1.0  # isolated vertices get +z
    np.divide(acc, ln, out=out, where=ln > 0)
    return out


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def sample_barycentric(mesh: TriMesh, count: int, rng: np.random.Generator):
    """Area-uniform surface samples.

    Returns
    -------
    face_idx : (count,) int
    bary : (count, 3) barycentric coordinates, non-negative, rows sum to 1
    """
    if count <= 0:
        raise ValueError("count must be positive")
    areas = mesh.face_areas() if not mesh.is_empty else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    cdf = np.cumsum(areas) / total
    face_idx = np.searchsorted(cdf, rng.random(count), side="right")
    face_idx = np.minimum(face_idx, len(areas) - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return face_idx, bary


def interpolate(mesh: TriMesh, attr: np.ndarray, face_idx, bary) -> np.ndarray:
    """Barycentric interpolation of a per-vertex attribute."""
    corners = attr[mesh.faces[face_idx]]
    return np.einsum("nk,nkd->nd", bary, corners)


# ---------------------------------------------------------------------------
# primitive meshes, mostly for tests and demos


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    v = lo + corners * (hi - lo)
    # outward-facing triangles, index = 4x + 2y + z
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # x = lo
            [4, 6, 7], [4, 7, 5],  # x = hi
            [0, 4, 5], [0, 5, 1],  # y = lo
            [2, 3, 7], [2, 7, 6],  # y = hi
            [0, 2, 6], [0, 6, 4],  # z = lo
            [1, 5, 7], [1, 7, 3],  # z = hi
        ]
    )
    return TriMesh(v, f)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)  # midpoints of edges (01, 12, 20)
        v = np.concatenate([v, mid])
        f = np.concatenate(
            [
                np.stack([f[:, 0], m[:, 0], m[:, 2]], 1),
                np.stack([f[:, 1], m[:, 1], m[:, 0]], 1),
                np.stack([f[:, 2], m[:, 2], m[:, 1]], 1),
                m,
            ]
        )
    return TriMesh(v * radius + np.asarray(center, dtype=np.float64), f)


def grid_plane(size: float = 1.0, n: int = 2, z: float = 0.0, flip: bool = False) -> TriMesh:
    """Square of side `size` centred on the z axis at height z, n x n quads, normal +z (or -z)."""
    xs = np.linspace(-size / 2, size / 2, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    v = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], 1)
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    if flip:
        f = f[:, ::-1]
    return TriMesh(v, f)
