"""Self-contact detection and mesh cutting before pose normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .mesh import TriMesh
from .rig import SkinWeightMatrix

CONTACT_EPS = 0.01


@dataclass
class ContactResult:
    contact: np.ndarray  # (V,) bool, vertices in a contact pair
    removed: np.ndarray  # (V,) bool, contact vertices grown by `dilate` rings
    mesh: TriMesh  # faces with every vertex removed are dropped; vertex array unchanged
    pairs: np.ndarray  # (P, 2) contact vertex pairs

    @property
    def watertight(self) -> bool:
        return self.mesh.is_watertight()


def _edge_graph(mesh: TriMesh):
    e = np.unique(mesh.edges(), axis=0)
    ln = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = coo_matrix((np.r_[ln, ln], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
    return g, e


def detect_self_contact(
    mesh: TriMesh,
    weights: SkinWeightMatrix,
    contact_eps: float = CONTACT_EPS,
    min_geodesic: Optional[float] = None,
    dilate: int = 1,
) -> ContactResult:
    """Mark vertex pairs that touch in space but belong to different body parts.

    A pair is in contact when the vertices are closer than `contact_eps`,
    their dominant skinning parts differ, and (unless `min_geodesic` is 0)
    the edge-path distance between them exceeds `min_geodesic`, which defaults
    to 5 * contact_eps. The geodesic guard keeps part boundaries on a single
    connected surface from being marked. The marked set is grown by `dilate`
    one-ring steps and faces whose vertices are all removed are cut away.
    """
    if weights.n_points != mesh.n_vertices:
        raise ValueError("weights must have one row per mesh vertex")
    n = mesh.n_vertices
    contact = np.zeros(n, dtype=bool)
    pairs = np.zeros((0, 2), dtype=np.int64)
    dom = weights.dominant_part()
    if n:
        pairs = cKDTree(mesh.vertices).query_pairs(contact_eps, output_type="ndarray").astype(np.int64)
    if len(pairs):
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        keep = (dom[pairs[:, 0]] != dom[pairs[:, 1]]) & (dom[pairs[:, 0]] >= 0) & (dom[pairs[:, 1]] >= 0)
        pairs = pairs[keep]
    geo_limit = 5.0 * contact_eps if min_geodesic is None else float(min_geodesic)
    if len(pairs) and geo_limit > 0 and mesh.n_faces:
        graph, _ = _edge_graph(mesh)
        src, inv = np.unique(pairs[:, 0], return_inverse=True)
        dist = dijkstra(graph, directed=False, indices=src, limit=geo_limit)
        pairs = pairs[~np.isfinite(dist[inv, pairs[:, 1]])]
    contact[pairs.ravel()] = True

    removed = contact.copy()
    if dilate and contact.any() and mesh.n_faces:
        _, e = _edge_graph(mesh)
        for _ in range(int(dilate)):
            grow = removed.copy()
            grow[e[removed[e[:, 0]], 1]] = True
            grow[e[removed[e[:, 1]], 0]] = True
            removed = grow
    cut = ~removed[mesh.faces].all(axis=1)
    return ContactResult(contact, removed, mesh.submesh(cut), pairs)
