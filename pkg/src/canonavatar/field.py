"""Implicit occupancy/normal/color fields, point sampling and isosurface extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import expit
from skimage import measure

from .geometry import SurfaceIndex, inside_mesh
from .mesh import TriMesh, empty_mesh, interpolate, sample_barycentric

TAU = 0.5
SHARPNESS = 0.01  # meters per logistic unit
DEFAULT_BOUNDS = ((-1.28, -1.28, -1.28), (1.28, 1.28, 1.28))
DEFAULT_RESOLUTION = 256
GAUSSIAN_COUNT = 20480
SURFACE_COUNT = 51200
GAUSSIAN_SIGMA = 0.05
_GRAY = 0.5


class WatertightError(ValueError):
    pass


@dataclass
class FieldSampleSet:
    positions: np.ndarray
    occupancy: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.positions)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.zeros_like(v)
    out[..., 2] = 1.0
    np.divide(v, n, out=out, where=n > 0)
    return out


class CanonicalField:
    """Occupancy in [0, 1], unit normal and RGB color at canonical points.

    Subclasses implement `occupancy`; normals default to the normalized
    negative occupancy gradient (central differences) and colors to gray.
    """

    def occupancy(self, points) -> np.ndarray:
        raise NotImplementedError

    def normal(self, points, h: float = 1e-4) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = np.empty_like(p)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            g[:, a] = self.occupancy(p + e) - self.occupancy(p - e)
        return _unit(-g)

    def color(self, points) -> np.ndarray:
        return np.full((len(np.asarray(points).reshape(-1, 3)), 3), _GRAY)

    def evaluate(self, points) -> FieldSampleSet:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return FieldSampleSet(p, self.occupancy(p), self.normal(p), self.color(p))


class ConstantField(CanonicalField):
    def __init__(self, value: float, color=(_GRAY, _GRAY, _GRAY)):
        self.value = float(value)
        self.rgb = np.asarray(color, dtype=np.float64)

    def occupancy(self, points):
        return np.full(len(np.asarray(points).reshape(-1, 3)), self.value)

    def normal(self, points, h: float = 1e-4):
        n = np.zeros((len(np.asarray(points).reshape(-1, 3)), 3))
        n[:, 2] = 1.0
        return n

    def color(self, points):
        return np.tile(self.rgb, (len(np.asarray(points).reshape(-1, 3)), 1))


class _SDFField(CanonicalField):
    """occupancy = logistic(-sdf / sharpness); the 0.5 level is the zero level set."""

    sharpness = SHARPNESS

    def sdf(self, points) -> np.ndarray:
        raise NotImplementedError

    def occupancy(self, points):
        return expit(-self.sdf(np.asarray(points, dtype=np.float64).reshape(-1, 3)) / self.sharpness)


class AnalyticSphere(_SDFField):
    def __init__(self, radius: float = 0.5, center=(0.0, 0.0, 0.0), sharpness: float = SHARPNESS, color=(_GRAY,) * 3):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)
        self.sharpness = float(sharpness)
        self.rgb = np.asarray(color, dtype=np.float64)

    def sdf(self, points):
        return np.linalg.norm(np.asarray(points).reshape(-1, 3) - self.center, axis=1) - self.radius

    def normal(self, points, h: float = 1e-4):
        return _unit(np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center)

    def color(self, points):
        return np.tile(self.rgb, (len(np.asarray(points).reshape(-1, 3)), 1))


class AnalyticBox(_SDFField):
    def __init__(self, half_extent=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0), sharpness: float = SHARPNESS):
        self.half_extent = np.asarray(half_extent, dtype=np.float64)
        self.center = np.asarray(center, dtype=np.float64)
        self.sharpness = float(sharpness)

    def sdf(self, points):
        q = np.abs(np.asarray(points).reshape(-1, 3) - self.center) - self.half_extent
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


class MeshSDFField(_SDFField):
    """Occupancy from the signed distance to a closed reference mesh.

    The signed distance is truncated at +-`band` meters; beyond the band the
    occupancy is within logistic(-band / sharpness) of 0 or 1 and only the
    sign (ray parity) is computed. Normals and colors are interpolated at the
    closest surface point.
    """

    def __init__(self, mesh: TriMesh, sharpness: float = SHARPNESS, band: Optional[float] = None):
        if not mesh.is_watertight():
            raise WatertightError(f"mesh has {mesh.boundary_edge_count()} open edges")
        self.mesh = mesh
        self.sharpness = float(sharpness)
        self.band = float(band) if band is not None else 8.0 * self.sharpness
        self.index = SurfaceIndex(mesh)
        self._normals = mesh.vertex_normals()

    def sdf(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dist = np.minimum(self.index.distance(p, max_distance=self.band), self.band)
        sign = np.where(inside_mesh(p, self.mesh), -1.0, 1.0)
        return sign * dist

    def _closest(self, points):
        return self.index.query(np.asarray(points, dtype=np.float64).reshape(-1, 3))

    def normal(self, points, h: float = 1e-4):
        hit = self._closest(points)
        return _unit(interpolate(self.mesh, self._normals, hit.face, hit.bary))

    def color(self, points):
        hit = self._closest(points)
        if self.mesh.colors is None:
            return np.full((len(hit.face), 3), _GRAY)
        return np.clip(interpolate(self.mesh, self.mesh.colors, hit.face, hit.bary), 0.0, 1.0)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred sampling of an axis-aligned box."""

    bounds_min: tuple = DEFAULT_BOUNDS[0]
    bounds_max: tuple = DEFAULT_BOUNDS[1]
    resolution: tuple = (DEFAULT_RESOLUTION,) * 3

    def __post_init__(self):
        res = self.resolution
        if np.isscalar(res):
            res = (int(res),) * 3
        object.__setattr__(self, "resolution", tuple(int(r) for r in res))
        object.__setattr__(self, "bounds_min", tuple(float(x) for x in self.bounds_min))
        object.__setattr__(self, "bounds_max", tuple(float(x) for x in self.bounds_max))
        if min(self.resolution) < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        if np.any(np.asarray(self.bounds_max) <= np.asarray(self.bounds_min)):
            raise ValueError("empty grid bounds")

    @property
    def cell_size(self) -> np.ndarray:
        return (np.asarray(self.bounds_max) - np.asarray(self.bounds_min)) / np.asarray(self.resolution)

    @property
    def spacing(self) -> float:
        """Isotropic spacing; anisotropic specs are rejected."""
        cs = self.cell_size
        if not np.allclose(cs, cs[0], rtol=1e-9, atol=0):
            raise ValueError("grid cells are not cubic")
        return float(cs[0])

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.bounds_min) + 0.5 * self.cell_size

    def axes(self):
        o, h = self.origin, self.cell_size
        return [o[a] + h[a] * np.arange(self.resolution[a]) for a in range(3)]

    def points(self) -> np.ndarray:
        gx, gy, gz = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


@dataclass
class ScalarGrid:
    """Values sampled at origin + spacing * (i, j, k), stored (nx, ny, nz) C-order."""

    values: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError("grid values must be 3D")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.spacing = float(self.spacing)
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")

    @property
    def resolution(self) -> tuple:
        return tuple(self.values.shape)

    def to_index(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.origin) / self.spacing


@dataclass
class GridEvaluation:
    occupancy: ScalarGrid
    normals: Optional[np.ndarray] = None  # (nx, ny, nz, 3)
    colors: Optional[np.ndarray] = None


class StoredGridField(CanonicalField):
    """Trilinear interpolation of stored grids; clamps to the border outside."""

    def __init__(self, grid: ScalarGrid, normals=None, colors=None):
        self.grid = grid
        self.normals = None if normals is None else np.asarray(normals, dtype=np.float64)
        self.colors = None if colors is None else np.asarray(colors, dtype=np.float64)

    def _interp(self, vol, points):
        idx = self.grid.to_index(points).T
        return map_coordinates(np.asarray(vol, dtype=np.float64), idx, order=1, mode="nearest")

    def occupancy(self, points):
        return np.clip(self._interp(self.grid.values, points), 0.0, 1.0)

    def normal(self, points, h: float = 1e-4):
        if self.normals is None:
            return super().normal(points, h=0.5 * self.grid.spacing)
        return _unit(np.stack([self._interp(self.normals[..., a], points) for a in range(3)], axis=1))

    def color(self, points):
        if self.colors is None:
            return super().color(points)
        return np.clip(np.stack([self._interp(self.colors[..., a], points) for a in range(3)], axis=1), 0.0, 1.0)


def evaluate_on_grid(
    field: CanonicalField,
    spec: GridSpec = GridSpec(),
    with_normals: bool = False,
    with_colors: bool = False,
    chunk: int = 1 << 20,
) -> GridEvaluation:
    """Sample a field at the cell centres of `spec`."""
    pts = spec.points()
    occ = np.concatenate([field.occupancy(pts[s : s + chunk]) for s in range(0, len(pts), chunk)])
    shape = spec.resolution
    grid = ScalarGrid(occ.reshape(shape), spec.origin, spec.spacing)
    normals = field.normal(pts).reshape(shape + (3,)) if with_normals else None
    colors = field.color(pts).reshape(shape + (3,)) if with_colors else None
    return GridEvaluation(grid, normals, colors)


def extract_isosurface(grid: ScalarGrid, tau: float = TAU) -> TriMesh:
    """Marching cubes at level `tau` with linear edge interpolation.

    Returns an empty mesh when the level is not crossed. Faces are oriented so
    normals point toward decreasing occupancy (outward).
    """
    vol = np.asarray(grid.values, dtype=np.float64)
    if not np.isfinite(vol).all():
        raise ValueError("grid contains non-finite values")
    if not (vol.min() < tau < vol.max()):
        return empty_mesh()
    verts, faces, _, _ = measure.marching_cubes(
        vol, level=tau, spacing=(grid.spacing,) * 3, gradient_direction="descent", method="lewiner"
    )
    verts = verts.astype(np.float64) + grid.origin
    mesh = TriMesh(verts, faces.astype(np.int64))
    if mesh.n_faces and _points_inward(mesh, grid, tau):
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh.with_normals()


def _points_inward(mesh: TriMesh, grid: ScalarGrid, tau: float) -> bool:
    # step along face normals; occupancy should drop outward
    cent = mesh.triangles.mean(axis=1)
    n = mesh.face_normals()
    f = StoredGridField(grid)
    h = 0.5 * grid.spacing
    drop = f.occupancy(cent + h * n) - f.occupancy(cent - h * n)
    return float(np.sum(drop)) > 0


# ---------------------------------------------------------------------------
# sampling regimes


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gaussian_around_surface(mesh: TriMesh, count: int = GAUSSIAN_COUNT, sigma: float = GAUSSIAN_SIGMA, seed=None) -> np.ndarray:
    """Area-uniform surface points displaced by isotropic N(0, sigma^2) noise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = _rng(seed)
    face, bary = sample_barycentric(mesh, count, rng)
    pts = interpolate(mesh, mesh.vertices, face, bary)
    return pts + sigma * rng.standard_normal((count, 3))


def sample_surface(mesh: TriMesh, count: int = SURFACE_COUNT, seed=None) -> FieldSampleSet:
    """Area-uniform surface samples with interpolated normals/colors; occupancy = 0.5."""
    rng = _rng(seed)
    face, bary = sample_barycentric(mesh, count, rng)
    pts = interpolate(mesh, mesh.vertices, face, bary)
    normals = _unit(interpolate(mesh, mesh.vertex_normals(), face, bary))
    colors = None if mesh.colors is None else interpolate(mesh, mesh.colors, face, bary)
    return FieldSampleSet(pts, np.full(count, TAU), normals, colors)


def occupancy_of_mesh(mesh: TriMesh, points, on_surface_tol: float = 1e-9) -> np.ndarray:
    """Binary inside/outside labels for a closed mesh; points on the surface count as inside."""
    if mesh.is_empty:
        raise WatertightError("empty mesh")
    open_edges = mesh.boundary_edge_count()
    if open_edges:
        raise WatertightError(f"mesh is not watertight: {open_edges} open edges")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = inside_mesh(pts, mesh)
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    on = SurfaceIndex(mesh).distance(pts, max_distance=on_surface_tol * scale) <= on_surface_tol * scale
    return (inside | on).astype(np.float64)
