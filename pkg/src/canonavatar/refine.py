"""Training losses and render-and-compare refinement of per-sphere attributes."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .field import (
    GAUSSIAN_COUNT,
    GAUSSIAN_SIGMA,
    SURFACE_COUNT,
    FieldSampleSet,
    occupancy_of_mesh,
    sample_gaussian_around_surface,
    sample_surface,
)
from .mesh import TriMesh
from .render import OrthoCamera, RenderSettings, SphereCloud, render, render_backward

log = logging.getLogger(__name__)


def huber(residual, delta: float = 0.1):
    r = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(r <= delta, 0.5 * r**2, delta * (r - 0.5 * delta))


def loss_occupancy(pred, target, delta: float = 0.1) -> float:
    """Mean Huber loss."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    if pred.size == 0:
        return 0.0
    return float(np.mean(huber(pred - target, delta)))


def loss_l1(pred, target) -> float:
    """Mean absolute error over all components."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    if pred.size == 0:
        return 0.0
    return float(np.mean(np.abs(pred - target)))


def loss_render_l1(rendered, target, mask=None):
    """Per-pixel L1 between images and its gradient w.r.t. `rendered`.

    `mask` is (H, W) boolean; the mean runs over masked pixels and channels.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    res = rendered - target
    if mask is None:
        m = np.ones(res.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool).reshape(res.shape[:2] + (1,) * (res.ndim - 2)), res.shape)
    count = int(m.sum())
    if count == 0:
        return 0.0, np.zeros_like(res)
    loss = float(np.abs(res[m]).sum() / count)
    grad = np.where(m, np.sign(res), 0.0) / count
    return loss, grad


@dataclass
class LossReport:
    occupancy_3d: float = 0.0
    normal_3d: float = 0.0
    color_3d: float = 0.0
    normal_2d: float = 0.0
    color_2d: float = 0.0

    @property
    def total(self) -> float:
        # fixed summation order
        return ((((self.occupancy_3d + self.normal_3d) + self.color_3d) + self.normal_2d) + self.color_2d)

    def as_dict(self) -> dict:
        return {
            "occupancy_3d": self.occupancy_3d,
            "normal_3d": self.normal_3d,
            "color_3d": self.color_3d,
            "normal_2d": self.normal_2d,
            "color_2d": self.color_2d,
            "total": self.total,
        }


def total_loss(
    occupancy=None,
    normals=None,
    colors=None,
    renders=None,
    delta: float = 0.1,
    weights: Optional[dict] = None,
) -> LossReport:
    """Sum of the five training terms.

    Each argument is a (pred, target) pair; `renders` is a sequence of
    (rendered color, target color, rendered normal, target normal) tuples.
    Missing terms contribute zero. `weights` optionally scales terms by name.
    """
    wt = {"occupancy_3d": 1.0, "normal_3d": 1.0, "color_3d": 1.0, "normal_2d": 1.0, "color_2d": 1.0}
    wt.update(weights or {})
    rep = LossReport()
    if occupancy is not None:
        rep.occupancy_3d = wt["occupancy_3d"] * loss_occupancy(*occupancy, delta=delta)
    if normals is not None:
        rep.normal_3d = wt["normal_3d"] * loss_l1(*normals)
    if colors is not None:
        rep.color_3d = wt["color_3d"] * loss_l1(*colors)
    for rc, tc, rn, tn in renders or ():
        rep.color_2d += wt["color_2d"] * loss_render_l1(rc, tc)[0]
        rep.normal_2d += wt["normal_2d"] * loss_render_l1(rn, tn)[0]
    return rep


# ---------------------------------------------------------------------------
# render-and-compare


@dataclass
class RefineConfig:
    steps: int = 200
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    decay_every: Optional[int] = None  # steps; None keeps the rate constant
    huber_delta: float = 0.1
    optimizer: str = "adaptive-rms"  # or "plain-gd"
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    optimize_colors: bool = True
    optimize_normals: bool = True
    optimize_opacity: bool = False
    color_weight: float = 1.0
    normal_weight: float = 1.0
    seed: Optional[int] = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adaptive-rms", "plain-gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, step: int) -> float:
        if not self.decay_every:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (step // self.decay_every)


@dataclass
class RenderTarget:
    camera: OrthoCamera
    color: np.ndarray  # (H, W, 3)
    normal: Optional[np.ndarray] = None  # (H, W, 3) raw normal blend
    mask: Optional[np.ndarray] = None


@dataclass
class RefineResult:
    cloud: SphereCloud
    trace: list = field(default_factory=list)  # one LossReport per step, before the update

    @property
    def total(self) -> np.ndarray:
        return np.array([r.total for r in self.trace])


class _RMSProp:
    def __init__(self, cfg: RefineConfig):
        self.cfg = cfg
        self.sq = {}

    def step(self, name, param, grad, lr):
        if self.cfg.optimizer == "plain-gd":
            return param - lr * grad
        sq = self.sq.get(name)
        sq = (1 - self.cfg.rms_decay) * grad**2 if sq is None else self.cfg.rms_decay * sq + (1 - self.cfg.rms_decay) * grad**2
        self.sq[name] = sq
        return param - lr * grad / (np.sqrt(sq) + self.cfg.rms_eps)


def _check_targets(targets: Sequence[RenderTarget]):
    if not targets:
        raise ValueError("refinement needs at least one target view")
    for i, t in enumerate(targets):
        shape = (t.camera.height, t.camera.width, 3)
        if np.shape(t.color) != shape:
            raise ValueError(f"target {i}: color image {np.shape(t.color)} does not match camera {shape}")
        if t.normal is not None and np.shape(t.normal) != shape:
            raise ValueError(f"target {i}: normal image {np.shape(t.normal)} does not match camera {shape}")


def _evaluate(cloud, targets, settings, cfg):
    rep = LossReport()
    grads = None
    for t in targets:
        out = render(cloud, t.camera, settings)
        lc, gc = loss_render_l1(out.color, t.color, t.mask)
        rep.color_2d += cfg.color_weight * lc
        gn = None
        if t.normal is not None:
            ln, gn = loss_render_l1(out.normal, t.normal, t.mask)
            rep.normal_2d += cfg.normal_weight * ln
            gn = cfg.normal_weight * gn
        g = render_backward(out, cfg.color_weight * gc, gn)
        if grads is None:
            grads = g
        else:
            grads.colors += g.colors
            grads.normals += g.normals
            grads.opacities += g.opacities
    return rep, grads


def refine_cloud(
    cloud: SphereCloud,
    targets: Sequence[RenderTarget],
    cfg: Optional[RefineConfig] = None,
    settings: Optional[RenderSettings] = None,
) -> RefineResult:
    """Fit sphere colors/normals (optionally opacities) to target renders.

    Colors are clamped to [0, 1] and normals renormalized after each step.
    The trace holds the loss measured before each update.
    """
    cfg = cfg or RefineConfig()
    _check_targets(targets)
    cur = cloud.copy()
    opt = _RMSProp(cfg)
    trace = []
    for step in range(cfg.steps):
        rep, g = _evaluate(cur, targets, settings, cfg)
        trace.append(rep)
        lr = cfg.lr_at(step)
        if cfg.optimize_colors:
            cur.colors = np.clip(opt.step("colors", cur.colors, g.colors, lr), 0.0, 1.0)
        if cfg.optimize_normals:
            n = opt.step("normals", cur.normals, g.normals, lr)
            ln = np.linalg.norm(n, axis=1, keepdims=True)
            cur.normals = np.where(ln > 1e-12, n / np.maximum(ln, 1e-12), cur.normals)
        if cfg.optimize_opacity:
            cur.opacities = np.clip(opt.step("opacities", cur.opacities, g.opacities, lr), 0.0, 1.0)
    result = RefineResult(cur, trace)
    _monitor(result.total)
    return result


def _monitor(total: np.ndarray, tail: float = 0.1, slack: float = 0.05):
    """Warn if the loss rose noticeably over the last `tail` fraction of steps."""
    if len(total) < 10:
        return
    seg = total[-max(2, int(np.ceil(tail * len(total)))):]
    rise = seg.max() - seg[0]
    if rise > slack * max(total[0], 1e-12):
        warnings.warn(f"refinement loss increased by {rise:.3g} in the final steps", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# training sample sets


@dataclass
class TrainingBatches:
    occupancy: FieldSampleSet  # Gaussian off-surface points, binary ground-truth occupancy
    surface: FieldSampleSet  # surface points with normals/colors, occupancy 0.5
    render: FieldSampleSet  # points for render-and-compare, binary ground-truth occupancy


def make_training_batches(
    mesh: TriMesh,
    seed=None,
    gaussian_count: int = GAUSSIAN_COUNT,
    surface_count: int = SURFACE_COUNT,
    render_count: int = SURFACE_COUNT,
    sigma: float = GAUSSIAN_SIGMA,
) -> TrainingBatches:
    """The three per-step sample sets, drawn from independent child streams of `seed`."""
    s_occ, s_surf, s_rend = np.random.SeedSequence(seed).spawn(3)
    p_occ = sample_gaussian_around_surface(mesh, gaussian_count, sigma, np.random.default_rng(s_occ))
    occ = FieldSampleSet(p_occ, occupancy_of_mesh(mesh, p_occ))
    surf = sample_surface(mesh, surface_count, np.random.default_rng(s_surf))
    p_r = sample_gaussian_around_surface(mesh, render_count, sigma, np.random.default_rng(s_rend))
    rend = FieldSampleSet(p_r, occupancy_of_mesh(mesh, p_r))
    return TrainingBatches(occ, surf, rend)
