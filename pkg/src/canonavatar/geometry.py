"""Exact point-to-surface queries and inside/outside tests for triangle meshes.

The closest-point search uses a k-d tree over triangle centroids. A query
is accepted once the k-th nearest centroid is farther than the current best
distance plus the largest triangle circumradius, which proves no unvisited
triangle can be closer. Otherwise k is doubled for the unresolved points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh

log = logging.getLogger(__name__)

_CHUNK = 65536


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all (N, 3).

    Returns
    -------
    q : (N, 3) closest points
    bary : (N, 3) barycentric coordinates of q w.r.t. (a, b, c)
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    bary = np.empty((n, 3))
    done = np.zeros(n, dtype=bool)

    def put(mask, u, v, w):
        m = mask & ~done
        bary[m, 0] = u[m] if np.ndim(u) else u
        bary[m, 1] = v[m] if np.ndim(v) else v
        bary[m, 2] = w[m] if np.ndim(w) else w
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        # vertex regions
        put((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
        put((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
        put((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
        # edge regions
        t = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - t, t, 0.0)
        t = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - t, 0.0, t)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1.0 - t, t)
        # face interior
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(np.ones(n, dtype=bool), 1.0 - v - w, v, w)

    bad = ~np.isfinite(bary).all(axis=1)
    if bad.any():
        # degenerate triangles reaching the interior branch: fall back to nearest vertex
        dd = np.stack([np.sum((p - x) ** 2, axis=1) for x in (a, b, c)], axis=1)[bad]
        bary[bad] = np.eye(3)[np.argmin(dd, axis=1)]
    q = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return q, bary


@dataclass
class SurfaceQuery:
    distance: np.ndarray  # (N,)
    face: np.ndarray  # (N,) int
    bary: np.ndarray  # (N, 3)
    point: np.ndarray  # (N, 3)


class SurfaceIndex:
    """Spatial index for exact closest-point queries on a triangle mesh.

    Degenerate (zero-area) triangles are skipped with a warning.
    """

    def __init__(self, mesh: TriMesh, area_eps: float = 1e-14):
        if mesh.is_empty:
            raise ValueError("empty mesh")
        self.mesh = mesh
        areas = mesh.face_areas()
        keep = areas > area_eps
        if not keep.all():
            log.warning("skipping %d degenerate triangles", int((~keep).sum()))
        if not keep.any():
            raise ValueError("mesh has only degenerate triangles")
        self.face_ids = np.flatnonzero(keep)
        tris = mesh.triangles[self.face_ids]
        self._a, self._b, self._c = tris[:, 0], tris[:, 1], tris[:, 2]
        cent = tris.mean(axis=1)
        self._radius = np.linalg.norm(tris - cent[:, None, :], axis=2).max(axis=1)
        self.max_radius = float(self._radius.max())
        self._tree = cKDTree(cent)
        self._n = len(cent)

    def lower_bound(self, points, upper: float = np.inf) -> np.ndarray:
        """Cheap lower bound on the distance from each point to the surface.

        Bounds above `upper` may be reported as inf.
        """
        dd, _ = self._tree.query(
            np.asarray(points, dtype=np.float64), k=1, distance_upper_bound=upper + self.max_radius
        )
        return np.maximum(dd - self.max_radius, 0.0)

    def query(self, points, max_distance: float = np.inf) -> SurfaceQuery:
        """Exact closest surface point for each query.

        Points provably farther than `max_distance` are not resolved; they get
        distance = inf and face = -1.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        best_d2 = np.full(n, np.inf)
        best_f = np.full(n, -1, dtype=np.int64)
        best_b = np.zeros((n, 3))
        best_q = np.full((n, 3), np.nan)
        for s in range(0, n, _CHUNK):
            sl = slice(s, min(s + _CHUNK, n))
            self._query_chunk(pts[sl], max_distance, best_d2[sl], best_f[sl], best_b[sl], best_q[sl])
        face = np.where(best_f >= 0, self.face_ids[np.maximum(best_f, 0)], -1)
        return SurfaceQuery(np.sqrt(best_d2), face, best_b, best_q)

    def distance(self, points, max_distance: float = np.inf) -> np.ndarray:
        return self.query(points, max_distance).distance

    def _query_chunk(self, pts, max_distance, best_d2, best_f, best_b, best_q):
        todo = np.arange(len(pts))
        if np.isfinite(max_distance):
            near = self.lower_bound(pts, max_distance) <= max_distance
            todo = todo[near]
        k_prev, k = 0, min(8, self._n)
        while len(todo):
            dd, ii = self._tree.query(pts[todo], k=k)
            dd = dd.reshape(len(todo), k)
            ii = ii.reshape(len(todo), k)[:, k_prev:]
            m = k - k_prev
            rows = np.repeat(todo, m)
            flat = ii.ravel()
            q, bary = closest_point_on_triangles(pts[rows], self._a[flat], self._b[flat], self._c[flat])
            d2 = np.sum((q - pts[rows]) ** 2, axis=1).reshape(len(todo), m)
            j = np.argmin(d2, axis=1)
            sel = np.arange(len(todo)) * m + j
            cand = d2[np.arange(len(todo)), j]
            better = cand < best_d2[todo]
            upd = todo[better]
            best_d2[upd] = cand[better]
            best_f[upd] = flat[sel[better]]
            best_b[upd] = bary[sel[better]]
            best_q[upd] = q[sel[better]]
            if k >= self._n:
                break
            # every unvisited centroid is at least dd[:, -1] away
            reach = dd[:, -1] - self.max_radius
            resolved = (reach > np.sqrt(best_d2[todo])) | (reach > max_distance)
            todo = todo[~resolved]
            k_prev, k = k, min(2 * k, self._n)
        if np.isfinite(max_distance):
            far = best_d2 > max_distance**2
            best_d2[far] = np.inf
            best_f[far] = -1
            best_q[far] = np.nan


# ---------------------------------------------------------------------------
# inside/outside by ray parity along +x


def _edge_sign(au, av, bu, bv, pu, pv):
    """Sign of the 2D edge function with a symbolic perturbation for exact zeros.

    The query point is treated as (pu + e, pv + e^2) for infinitesimal e, so a
    point on an edge shared by two triangles falls in exactly one of them.
    """
    e = (bu - au) * (pv - av) - (bv - av) * (pu - au)
    s = np.sign(e)
    zero = s == 0
    if zero.any():
        t1 = np.sign(-(bv - av))
        t2 = np.sign(bu - au)
        s = np.where(zero, np.where(t1 != 0, t1, t2), s)
    return s


def ray_crossings(points, mesh: TriMesh, cell: float | None = None) -> np.ndarray:
    """Count crossings of the ray p + t*(1, 0, 0), t > 0, with the mesh.

    Triangles and query points are bucketed on a uniform (y, z) grid so that
    only triangles whose (y, z) bounding box covers a point's bucket are tested.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros(len(pts), dtype=np.int64)
    if mesh.is_empty or not len(pts):
        return counts
    tris = mesh.triangles
    yz = tris[:, :, 1:]
    lo = yz.min(axis=1)
    hi = yz.max(axis=1)
    if cell is None:
        ext = np.median(np.maximum(hi - lo, 0.0).max(axis=1))
        cell = float(ext) if ext > 0 else 1.0
    origin = np.minimum(lo.min(axis=0), pts[:, 1:].min(axis=0))
    tlo = np.floor((lo - origin) / cell).astype(np.int64)
    thi = np.floor((hi - origin) / cell).astype(np.int64)
    pcell = np.floor((pts[:, 1:] - origin) / cell).astype(np.int64)
    ncol = int(max(thi[:, 1].max(), pcell[:, 1].max())) + 1
    pkey = pcell[:, 0] * ncol + pcell[:, 1]
    order = np.argsort(pkey, kind="stable")
    skey = pkey[order]

    # (triangle, bucket) pairs over each triangle's bbox
    nu = thi[:, 0] - tlo[:, 0] + 1
    nv = thi[:, 1] - tlo[:, 1] + 1
    nb = nu * nv
    tri_of = np.repeat(np.arange(len(tris)), nb)
    local = np.arange(nb.sum()) - np.repeat(np.cumsum(nb) - nb, nb)
    bu = tlo[tri_of, 0] + local // nv[tri_of]
    bv = tlo[tri_of, 1] + local % nv[tri_of]
    bkey = bu * ncol + bv
    start = np.searchsorted(skey, bkey, side="left")
    stop = np.searchsorted(skey, bkey, side="right")
    npair = stop - start
    keep = npair > 0
    tri_of, start, npair = tri_of[keep], start[keep], npair[keep]

    # expand in chunks of buckets to bound memory
    csum = np.cumsum(npair)
    lo_i = 0
    while lo_i < len(npair):
        base = csum[lo_i - 1] if lo_i else 0
        hi_i = int(np.searchsorted(csum, base + 4 * _CHUNK, side="right"))
        hi_i = max(hi_i, lo_i + 1)
        np_ = npair[lo_i:hi_i]
        t_idx = np.repeat(tri_of[lo_i:hi_i], np_)
        off = np.arange(np_.sum()) - np.repeat(np.cumsum(np_) - np_, np_)
        p_idx = order[np.repeat(start[lo_i:hi_i], np_) + off]
        _accumulate_crossings(pts[p_idx], tris[t_idx], p_idx, counts)
        lo_i = hi_i
    return counts


def _accumulate_crossings(p, t, p_idx, counts):
    pu, pv = p[:, 1], p[:, 2]
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    orient = np.sign((b[:, 1] - a[:, 1]) * (c[:, 2] - a[:, 2]) - (b[:, 2] - a[:, 2]) * (c[:, 1] - a[:, 1]))
    s0 = _edge_sign(a[:, 1], a[:, 2], b[:, 1], b[:, 2], pu, pv)
    s1 = _edge_sign(b[:, 1], b[:, 2], c[:, 1], c[:, 2], pu, pv)
    s2 = _edge_sign(c[:, 1], c[:, 2], a[:, 1], a[:, 2], pu, pv)
    inside = (orient != 0) & (s0 == orient) & (s1 == orient) & (s2 == orient)
    if not inside.any():
        return
    p, a, b, c, pu, pv = p[inside], a[inside], b[inside], c[inside], pu[inside], pv[inside]
    det = (b[:, 1] - a[:, 1]) * (c[:, 2] - a[:, 2]) - (b[:, 2] - a[:, 2]) * (c[:, 1] - a[:, 1])
    l1 = ((pu - a[:, 1]) * (c[:, 2] - a[:, 2]) - (pv - a[:, 2]) * (c[:, 1] - a[:, 1])) / det
    l2 = ((b[:, 1] - a[:, 1]) * (pv - a[:, 2]) - (b[:, 2] - a[:, 2]) * (pu - a[:, 1])) / det
    x_hit = a[:, 0] + l1 * (b[:, 0] - a[:, 0]) + l2 * (c[:, 0] - a[:, 0])
    hit = x_hit > p[:, 0]
    np.add.at(counts, p_idx[inside][hit], 1)


def inside_mesh(points, mesh: TriMesh) -> np.ndarray:
    """Ray-parity inside test for a closed mesh (boolean per point)."""
    return (ray_crossings(points, mesh) % 2).astype(bool)
