"""Opacity-aware soft sphere splatting with an analytic backward pass.

Each sphere projects orthographically to a disk. A pixel j receives

    w_ij = a_i d_ij exp(a_i z_i / gamma) / (sum_k a_k d_kj exp(a_k z_k / gamma) + exp(eps / gamma))

where a is opacity, d the soft coverage of the pixel by the disk and z the
normalized depth (1 at the near plane, 0 at the far plane). The remainder
goes to the background. All exponentials are evaluated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

GAMMA = 1e-5
EPSILON = 1e-5
SPHERE_RADIUS = 0.01
MAX_CONTRIBUTORS = 32


@dataclass
class SphereCloud:
    """Renderable spheres with per-sphere color, normal and opacity."""

    centers: np.ndarray
    colors: np.ndarray
    normals: np.ndarray
    opacities: np.ndarray
    radius: float = SPHERE_RADIUS

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        self.opacities = np.clip(np.asarray(self.opacities, dtype=np.float64).reshape(n), 0.0, 1.0)
        self.radius = float(self.radius)
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        if n and np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-5):
            raise ValueError("sphere normals must be unit length")

    def __len__(self):
        return len(self.centers)

    def copy(self) -> "SphereCloud":
        return SphereCloud(self.centers.copy(), self.colors.copy(), self.normals.copy(), self.opacities.copy(), self.radius)

    def permuted(self, order) -> "SphereCloud":
        return SphereCloud(self.centers[order], self.colors[order], self.normals[order], self.opacities[order], self.radius)

    @classmethod
    def empty(cls, radius: float = SPHERE_RADIUS) -> "SphereCloud":
        z = np.zeros((0, 3))
        return cls(z, z, z, np.zeros(0), radius)


@dataclass
class OrthoCamera:
    """Orthographic camera.

    Camera frame: x right, y up, z along the viewing direction (depth).
    Pixel column u = width/2 + x/scale, row v = height/2 - y/scale; pixel
    (r, c) has its centre at (c + 0.5, r + 0.5).
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 64
    height: int = 64
    scale: float = 0.005  # meters per pixel
    near: float = 0.0
    far: float = 2.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not self.near < self.far:
            raise ValueError("camera near must be less than far")
        if not self.scale > 0:
            raise ValueError("camera scale must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), **kw) -> "OrthoCamera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        upv = np.cross(right, fwd)
        rot = np.stack([right, upv, fwd])
        return cls(rot, -rot @ eye, **kw)

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation

    def pixel_coords(self, cam_points) -> np.ndarray:
        u = self.width / 2.0 + cam_points[:, 0] / self.scale
        v = self.height / 2.0 - cam_points[:, 1] / self.scale
        return np.stack([u, v], axis=1)

    def normalized_depth(self, depth) -> np.ndarray:
        return (self.far - np.asarray(depth, dtype=np.float64)) / (self.far - self.near)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width,
            "height": self.height,
            "scale": self.scale,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrthoCamera":
        return cls(**d)


@dataclass
class Projection:
    pixel: np.ndarray  # (N, 2) (u, v)
    radius_px: float
    depth: np.ndarray  # (N,) meters
    z: np.ndarray  # (N,) normalized depth in [0, 1], larger is closer
    clamped: np.ndarray  # (N,) bool, depth was outside [near, far]


def project(cloud: SphereCloud, cam: OrthoCamera) -> Projection:
    pc = cam.to_camera(cloud.centers)
    z_raw = cam.normalized_depth(pc[:, 2])
    clamped = (z_raw < 0.0) | (z_raw > 1.0)
    return Projection(cam.pixel_coords(pc), cloud.radius / cam.scale, pc[:, 2], np.clip(z_raw, 0.0, 1.0), clamped)


def coverage(signed_distance, sigma: float = 1.0):
    """Soft coverage of a pixel by a disk; s < 0 inside the rim, d(0) = 0.5."""
    return expit(-np.asarray(signed_distance, dtype=np.float64) / sigma)


def _log_coverage(s, sigma):
    return -np.logaddexp(0.0, s / sigma)


def blend_pixel(contributors, gamma: float = GAMMA, epsilon: float = EPSILON):
    """Blending weights for one pixel.

    Parameters
    ----------
    contributors : (M, 3) rows of (d, z, alpha)

    Returns
    -------
    weights : (M,) array
    background : float
    """
    c = np.asarray(contributors, dtype=np.float64).reshape(-1, 3)
    d, z, a = c[:, 0], c[:, 1], c[:, 2]
    with np.errstate(divide="ignore"):
        ls = np.log(a) + np.log(d) + a * z / gamma
    bg = epsilon / gamma
    m = max(bg, ls.max()) if len(ls) else bg
    e = np.exp(ls - m)
    eb = np.exp(bg - m)
    total = e.sum() + eb
    return e / total, eb / total


@dataclass
class RenderSettings:
    gamma: float = GAMMA
    epsilon: float = EPSILON
    sigma_d: float = 1.0  # pixels
    support: float = 3.0  # coverage cut beyond the rim, in units of sigma_d
    max_contributors: Optional[int] = MAX_CONTRIBUTORS
    background: tuple = (0.0, 0.0, 0.0)
    background_normal: tuple = (0.0, 0.0, 0.0)


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    normal: np.ndarray  # (H, W, 3) raw blend
    alpha: np.ndarray  # (H, W) sum of sphere weights
    background_weight: np.ndarray  # (H, W)
    # per-(pixel, sphere) records kept for the backward pass, sorted by pixel
    pixel: Optional[np.ndarray] = None
    sphere: Optional[np.ndarray] = None
    weight: Optional[np.ndarray] = None
    weight_over_alpha: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    coverage: Optional[np.ndarray] = None
    cloud: Optional[SphereCloud] = None
    settings: Optional[RenderSettings] = None

    @property
    def shape(self):
        return self.alpha.shape

    def normal_display(self) -> np.ndarray:
        """Unit normals remapped to [0, 1]; background stays at 0.5 gray."""
        n = self.normal
        ln = np.linalg.norm(n, axis=2, keepdims=True)
        unit = np.divide(n, ln, out=np.zeros_like(n), where=ln > 1e-12)
        return unit * 0.5 + 0.5

    def has_records(self) -> bool:
        return self.pixel is not None and self.cloud is not None


def _pairs(proj: Projection, cam: OrthoCamera, reach: float):
    """All (sphere, pixel) pairs whose pixel centre is within `reach` px of the disk centre."""
    u, v = proj.pixel[:, 0], proj.pixel[:, 1]
    c0 = np.clip(np.floor(u - reach - 0.5).astype(np.int64), 0, cam.width)
    c1 = np.clip(np.ceil(u + reach - 0.5).astype(np.int64) + 1, 0, cam.width)
    r0 = np.clip(np.floor(v - reach - 0.5).astype(np.int64), 0, cam.height)
    r1 = np.clip(np.ceil(v + reach - 0.5).astype(np.int64) + 1, 0, cam.height)
    nc = np.maximum(c1 - c0, 0)
    nr = np.maximum(r1 - r0, 0)
    cnt = nc * nr
    sph = np.repeat(np.arange(len(u)), cnt)
    local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ncs = nc[sph]
    rows = r0[sph] + local // np.maximum(ncs, 1)
    cols = c0[sph] + local % np.maximum(ncs, 1)
    du = cols + 0.5 - u[sph]
    dv = rows + 0.5 - v[sph]
    dist = np.hypot(du, dv)
    keep = dist <= reach
    return sph[keep], rows[keep] * cam.width + cols[keep], dist[keep]


def render(cloud: SphereCloud, cam: OrthoCamera, settings: Optional[RenderSettings] = None, keep_records: bool = True) -> RenderOutput:
    """Render color and normal images of a sphere cloud."""
    st = settings or RenderSettings()
    h, w = cam.height, cam.width
    npix = h * w
    bg_score = st.epsilon / st.gamma
    bg_col = np.asarray(st.background, dtype=np.float64)
    bg_nrm = np.asarray(st.background_normal, dtype=np.float64)

    if len(cloud):
        proj = project(cloud, cam)
        reach = proj.radius_px + st.support * st.sigma_d
        sph, pix, dist = _pairs(proj, cam, reach)
    else:
        sph = pix = np.zeros(0, dtype=np.int64)
        dist = np.zeros(0)
        proj = None

    if len(sph):
        a = cloud.opacities[sph]
        z = proj.z[sph]
        logd = _log_coverage(dist - proj.radius_px, st.sigma_d)
        base = logd + a * z / st.gamma  # log(w / a) up to normalization
        with np.errstate(divide="ignore"):
            ls = np.log(a) + base
        order = np.lexsort((sph, -ls, pix))
        sph, pix, a, z, logd, base, ls = (x[order] for x in (sph, pix, a, z, logd, base, ls))
        starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
        if st.max_contributors is not None:
            rank = np.arange(len(pix)) - np.repeat(starts, np.diff(np.r_[starts, len(pix)]))
            keep = rank < st.max_contributors
            sph, pix, a, z, logd, base, ls = (x[keep] for x in (sph, pix, a, z, logd, base, ls))
            starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
        m = np.full(npix, bg_score)
        m[pix[starts]] = np.maximum(bg_score, ls[starts])  # groups are sorted by score
        e = np.exp(ls - m[pix])
        eb = np.exp(bg_score - m)
        total = np.bincount(pix, weights=e, minlength=npix) + eb
        wgt = e / total[pix]
        w_over_a = np.exp(base - m[pix]) / total[pix]
        w_bg = eb / total
    else:
        a = z = logd = wgt = w_over_a = np.zeros(0)
        w_bg = np.ones(npix)

    color = np.empty((npix, 3))
    normal = np.empty((npix, 3))
    for ch in range(3):
        color[:, ch] = np.bincount(pix, weights=wgt * cloud.colors[sph, ch], minlength=npix) + w_bg * bg_col[ch]
        normal[:, ch] = np.bincount(pix, weights=wgt * cloud.normals[sph, ch], minlength=npix) + w_bg * bg_nrm[ch]
    alpha = np.bincount(pix, weights=wgt, minlength=npix)

    out = RenderOutput(color.reshape(h, w, 3), normal.reshape(h, w, 3), alpha.reshape(h, w), w_bg.reshape(h, w))
    if keep_records:
        out = replace(
            out,
            pixel=pix,
            sphere=sph,
            weight=wgt,
            weight_over_alpha=w_over_a,
            z=z,
            coverage=np.exp(logd),
            cloud=cloud.copy(),
            settings=st,
        )
    return out


@dataclass
class RenderGradients:
    colors: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3)
    opacities: np.ndarray  # (N,)


def render_backward(output: RenderOutput, grad_color=None, grad_normal=None) -> RenderGradients:
    """Gradients of a scalar loss w.r.t. sphere colors, normals and opacities.

    Parameters
    ----------
    grad_color, grad_normal : (H, W, 3) arrays, optional
        dLoss/d(color image) and dLoss/d(raw normal image).
    """
    if not output.has_records():
        raise ValueError("render output has no contributor records; render with keep_records=True")
    cloud = output.cloud
    st = output.settings
    n = len(cloud)
    h, w = output.shape
    pix, sph, wgt = output.pixel, output.sphere, output.weight
    if len(pix) and (sph.max() >= n or pix.max() >= h * w):
        raise ValueError("stale contributor records")
    g_col = np.zeros((n, 3))
    g_nrm = np.zeros((n, 3))
    # d pixel / d score_i = w_i (attr_i - pixel); d score_i / d alpha_i = 1/alpha_i + z_i/gamma
    dscore = output.weight_over_alpha + wgt * output.z / st.gamma
    acc = np.zeros(len(pix))
    for grad, attr, img, out in (
        (grad_color, cloud.colors, output.color, g_col),
        (grad_normal, cloud.normals, output.normal, g_nrm),
    ):
        if grad is None:
            continue
        g = np.asarray(grad, dtype=np.float64).reshape(h * w, 3)
        if g.shape != (h * w, 3):
            raise ValueError("gradient image shape mismatch")
        gp = g[pix]
        for ch in range(3):
            out[:, ch] = np.bincount(sph, weights=wgt * gp[:, ch], minlength=n)
        acc += np.einsum("ij,ij->i", gp, attr[sph] - img.reshape(-1, 3)[pix])
    g_alpha = np.bincount(sph, weights=dscore * acc, minlength=n)
    return RenderGradients(g_col, g_nrm, g_alpha)


def opacity_from_occupancy(occupancy, scale: float = 1.0, shift: float = 0.2):
    """alpha = clamp(scale * o + shift, 0, 1); o = 0.5 maps to 0.7 by default."""
    return np.clip(scale * np.asarray(occupancy, dtype=np.float64) + shift, 0.0, 1.0)
