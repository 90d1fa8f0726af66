"""End-to-end canonicalization: posed scan -> canonical occupancy -> mesh -> reposed mesh."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .contact import CONTACT_EPS, detect_self_contact
from .field import TAU, GridSpec, MeshSDFField, evaluate_on_grid, extract_isosurface
from .geometry import SurfaceIndex
from .mesh import TriMesh
from .rig import repose_mesh
from .semspace import DEFAULT_CUTOFF, FeatureKind, assign_skin_weights, semdf_to_canonical, spatial_features

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, written=()):
        self.stage = stage
        self.written = list(written)
        super().__init__(f"{stage}: {message}")


@dataclass
class PipelineConfig:
    """Inputs and settings for `pipeline_canonicalize`. Paths may be relative to `base_dir`."""

    template: str = ""
    weights: str = ""
    rig: str = ""
    pose: str = ""
    scan: Optional[str] = None  # posed input mesh
    canonical_grid: Optional[str] = None  # precomputed canonical occupancy, replaces the scan stages
    landmarks: Optional[str] = None
    features: Optional[str] = None  # feature kind for extracted vertices, requires landmarks
    output_dir: str = "out"
    bounds_min: tuple = (-1.28, -1.28, -1.28)
    bounds_max: tuple = (1.28, 1.28, 1.28)
    resolution: int = 128
    tau: float = TAU
    cutoff: float = DEFAULT_CUTOFF
    contact_cut: bool = False
    contact_eps: float = CONTACT_EPS
    length_scale: float = 1.0
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        d = json.loads(Path(path).read_text())
        d.setdefault("base_dir", str(Path(path).parent))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def path(self, name: str) -> Optional[Path]:
        value = getattr(self, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.bounds_min, self.bounds_max, self.resolution)


@dataclass
class PipelineOutputs:
    canonical_scan: Optional[TriMesh]
    canonical_mesh: TriMesh
    reposed_mesh: TriMesh
    written: dict = field(default_factory=dict)
    unassigned_scan_vertices: int = 0


def _require(cfg: PipelineConfig, name: str) -> Path:
    p = cfg.path(name)
    if p is None:
        raise PipelineError("inputs", f"missing required input '{name}'")
    if not p.exists():
        raise PipelineError("inputs", f"input '{name}' not found: {p}")
    return p


def pipeline_canonicalize(cfg: PipelineConfig) -> PipelineOutputs:
    """Run the canonicalization chain and write every intermediate.

    Stages: load -> (contact cut) -> pose-normalize scan -> canonical occupancy
    grid -> isosurface -> skin weights -> repose -> (spatial features).
    Every intermediate is written, then re-read, and the re-read copy feeds
    the next stage, so rerunning any stage from the files reproduces the outputs.
    """
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = Path(cfg.base_dir) / out
    written: dict = {}
    stage = "inputs"

    def put(key, path, saver, obj, loader):
        saver(path, obj)
        written[key] = str(path)
        return loader(path)

    try:
        template = io.load_mesh(_require(cfg, "template"))
        weights = io.load_weights(_require(cfg, "weights"))
        rig = io.load_rig(_require(cfg, "rig"))
        pose = io.load_pose(_require(cfg, "pose"))
        landmarks = None
        if cfg.features:
            FeatureKind(cfg.features)
            landmarks = io.load_landmarks(_require(cfg, "landmarks"))
        if cfg.canonical_grid is None and cfg.scan is None:
            raise PipelineError("inputs", "need either 'scan' or 'canonical_grid'")
        out.mkdir(parents=True, exist_ok=True)

        stage = "repose_template"
        posed_template = repose_mesh(template, weights, rig, pose)
        index = SurfaceIndex(posed_template)

        canonical_scan = None
        unassigned = 0
        if cfg.canonical_grid is not None:
            stage = "load_grid"
            grid = io.load_grid(_require(cfg, "canonical_grid"))
        else:
            stage = "load_scan"
            scan = io.load_mesh(_require(cfg, "scan"))
            if cfg.contact_cut:
                stage = "contact_cut"
                scan_w = assign_skin_weights(scan.vertices, posed_template, weights, cfg.cutoff, index).weights
                cut = detect_self_contact(scan, scan_w, cfg.contact_eps)
                scan = put("contact_cut", out / "scan_cut.ply", io.save_ply, cut.mesh, io.load_ply)
            stage = "canonicalize"
            sem = semdf_to_canonical(scan.vertices, posed_template, weights, rig, pose, cfg.cutoff, index)
            unassigned = int((~sem.assigned).sum())
            if unassigned:
                log.warning("%d scan vertices could not be canonicalized", unassigned)
            canonical_scan = put(
                "canonical_scan", out / "canonical_scan.ply", io.save_ply,
                TriMesh(sem.positions, scan.faces, colors=scan.colors), io.load_ply,
            )
            stage = "occupancy"
            ev = evaluate_on_grid(MeshSDFField(canonical_scan), cfg.grid_spec())
            grid = put("grid", out / "canonical_occupancy.grid", io.save_grid, ev.occupancy, io.load_grid)

        stage = "extract"
        canonical = put(
            "canonical_mesh", out / "canonical_mesh.ply", io.save_ply, extract_isosurface(grid, cfg.tau), io.load_ply
        )
        if canonical.is_empty:
            raise PipelineError(stage, "isosurface is empty", written.values())

        stage = "skin_weights"
        sem = assign_skin_weights(canonical.vertices, template, weights, cfg.cutoff)
        if not sem.assigned.all():
            raise PipelineError(
                stage, f"{int((~sem.assigned).sum())} reconstructed vertices are beyond the cutoff", written.values()
            )
        mesh_w = put("weights", out / "canonical_weights.json", io.save_weights, sem.weights, io.load_weights)

        stage = "repose"
        reposed = put("reposed_mesh", out / "reposed_mesh.ply", io.save_ply, repose_mesh(canonical, mesh_w, rig, pose), io.load_ply)

        if cfg.features:
            stage = "features"
            feats = spatial_features(canonical.vertices, landmarks, cfg.features, cfg.length_scale)
            io.save_features(out / "features.bin", feats, cfg.features, cfg.length_scale)
            written["features"] = str(out / "features.bin")
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise PipelineError(stage, str(exc), written.values()) from exc

    # paths relative to the output directory keep the manifest relocatable
    rel = {k: Path(v).relative_to(out).as_posix() for k, v in written.items()}
    manifest = {"config": {k: v for k, v in asdict(cfg).items() if k != "base_dir"}, "written": rel}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=list) + "\n")
    return PipelineOutputs(canonical_scan, canonical, reposed, written, unassigned)
