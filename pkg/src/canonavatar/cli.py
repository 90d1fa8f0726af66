"""Command-line interface.

Every subcommand accepts ``--seed`` and ``--config FILE``; keys in the JSON
config become defaults for the subcommand's options (command-line flags win).
Failures print one line ``error: <command>: <message>`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .contact import CONTACT_EPS, detect_self_contact
from .field import (
    GAUSSIAN_COUNT,
    GAUSSIAN_SIGMA,
    SURFACE_COUNT,
    TAU,
    GridSpec,
    MeshSDFField,
    evaluate_on_grid,
    extract_isosurface,
    sample_gaussian_around_surface,
    sample_surface,
)
from .metrics import DEFAULT_SAMPLES, NORMAL_RESOLUTION, default_metric_camera, evaluate
from .pipeline import PipelineConfig, pipeline_canonicalize
from .refine import RefineConfig, RenderTarget, make_training_batches, refine_cloud
from .render import GAMMA, EPSILON, MAX_CONTRIBUTORS, SPHERE_RADIUS, RenderSettings, SphereCloud, opacity_from_occupancy, render
from .rig import animate, forward_kinematics, lbs_apply, lbs_invert
from .semspace import DEFAULT_CUTOFF, assign_skin_weights

THREADS_ENV = "CANONAVATAR_THREADS"


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of printing usage, so errors stay on one line."""

    def error(self, message):
        raise CLIError(message)


def _write_samples(path, columns: dict):
    names = list(columns)
    data = np.concatenate([np.asarray(columns[n], dtype=np.float64).reshape(len(columns[names[0]]), -1) for n in names], axis=1)
    widths = {n: int(np.asarray(columns[n]).reshape(len(data), -1).shape[1]) for n in names}
    io._write_header_blob(path, {"shape": list(data.shape), "columns": [[n, widths[n]] for n in names], "dtype": "<f4"}, data)


def _render_settings(args) -> RenderSettings:
    return RenderSettings(gamma=args.gamma, epsilon=args.epsilon, sigma_d=args.sigma_d, max_contributors=args.max_contributors)


def _add_render_opts(p):
    p.add_argument("--gamma", type=float, default=GAMMA)
    p.add_argument("--epsilon", type=float, default=EPSILON)
    p.add_argument("--sigma-d", type=float, default=1.0, help="coverage softness in pixels")
    p.add_argument("--max-contributors", type=int, default=MAX_CONTRIBUTORS)


# ---------------------------------------------------------------------------
# subcommands


def cmd_skin(args):
    rig, pose, weights = io.load_rig(args.rig), io.load_pose(args.pose), io.load_weights(args.weights)
    g = forward_kinematics(rig, pose)
    mesh = io.load_mesh(args.input)
    if args.mode == "apply":
        out = mesh.with_vertices(lbs_apply(mesh.vertices, weights, g)).with_normals()
    else:
        res = lbs_invert(mesh.vertices, weights, g)
        if not res.valid.all():
            print(f"unresolved {int((~res.valid).sum())}")
        out = mesh.with_vertices(res.points).with_normals() if mesh.n_faces else mesh.with_vertices(res.points, False)
    io.save_mesh(args.out, out)


def cmd_canonicalize(args):
    fields = PipelineConfig.__dataclass_fields__
    cfg = PipelineConfig(**{k: getattr(args, k) for k in fields if getattr(args, k, None) is not None})
    out = pipeline_canonicalize(cfg)
    for key in sorted(out.written):
        print(f"{key} {out.written[key]}")


def cmd_extract(args):
    if args.grid:
        grid = io.load_grid(args.grid)
    else:
        spec = GridSpec(args.bounds_min, args.bounds_max, args.resolution)
        grid = evaluate_on_grid(MeshSDFField(io.load_mesh(args.mesh)), spec).occupancy
        if args.grid_out:
            io.save_grid(args.grid_out, grid)
            grid = io.load_grid(args.grid_out)
    mesh = extract_isosurface(grid, args.tau)
    io.save_mesh(args.out, mesh)
    print(f"vertices {mesh.n_vertices} faces {mesh.n_faces}")


def cmd_sample(args):
    mesh = io.load_mesh(args.mesh)
    rng = np.random.default_rng(args.seed)
    if args.regime == "gaussian":
        pts = sample_gaussian_around_surface(mesh, args.count or GAUSSIAN_COUNT, args.sigma, rng)
        _write_samples(args.out, {"position": pts})
    elif args.regime == "surface":
        s = sample_surface(mesh, args.count or SURFACE_COUNT, rng)
        cols = {"position": s.positions, "occupancy": s.occupancy, "normal": s.normals}
        if s.colors is not None:
            cols["color"] = s.colors
        _write_samples(args.out, cols)
    elif args.regime == "cloud":
        s = sample_surface(mesh, args.count or SURFACE_COUNT, rng)
        colors = s.colors if s.colors is not None else np.full((len(s), 3), 0.5)
        cloud = SphereCloud(s.positions, colors, s.normals, opacity_from_occupancy(s.occupancy), args.radius)
        io.save_cloud_ply(args.out, cloud)
    else:
        b = make_training_batches(mesh, args.seed, sigma=args.sigma)
        stem = Path(args.out)
        _write_samples(stem.with_name(stem.name + ".occupancy.bin"), {"position": b.occupancy.positions, "occupancy": b.occupancy.occupancy})
        _write_samples(
            stem.with_name(stem.name + ".surface.bin"),
            {"position": b.surface.positions, "occupancy": b.surface.occupancy, "normal": b.surface.normals},
        )
        _write_samples(stem.with_name(stem.name + ".render.bin"), {"position": b.render.positions, "occupancy": b.render.occupancy})


def _save_render(prefix, out):
    io.save_png(f"{prefix}color.png", out.color)
    io.save_pfm(f"{prefix}color.pfm", out.color)
    io.save_png(f"{prefix}normal.png", out.normal_display())
    io.save_pfm(f"{prefix}normal.pfm", out.normal)
    io.save_pfm(f"{prefix}alpha.pfm", out.alpha)


def cmd_render(args):
    cloud = io.load_cloud_ply(args.cloud)
    cams = io.load_cameras(args.cameras)
    st = _render_settings(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cams):
        _save_render(out_dir / f"view{i:02d}_", render(cloud, cam, st, keep_records=False))


def cmd_refine(args):
    cloud = io.load_cloud_ply(args.cloud)
    cams = io.load_cameras(args.cameras)
    colors = args.target_color or []
    normals = args.target_normal or []
    if len(colors) != len(cams):
        raise CLIError(f"{len(cams)} cameras but {len(colors)} target color images")
    if normals and len(normals) != len(cams):
        raise CLIError(f"{len(cams)} cameras but {len(normals)} target normal images")
    targets = [
        RenderTarget(cam, io.load_pfm(c), io.load_pfm(normals[i]) if normals else None)
        for i, (cam, c) in enumerate(zip(cams, colors))
    ]
    cfg = RefineConfig(
        steps=args.steps, learning_rate=args.lr, decay_every=args.decay_every, optimizer=args.optimizer,
        optimize_opacity=args.optimize_opacity, seed=args.seed,
    )
    res = refine_cloud(cloud, targets, cfg, _render_settings(args))
    io.save_cloud_ply(args.out, res.cloud)
    if args.trace:
        io.save_trace_csv(args.trace, res.trace)
    if len(res.trace):
        print(f"loss {res.trace[0].total:.6g} -> {res.trace[-1].total:.6g}")


def cmd_metrics(args):
    recon, gt = io.load_mesh(args.recon), io.load_mesh(args.gt)
    cam = io.load_cameras(args.camera)[0] if args.camera else default_metric_camera(gt, args.resolution)
    rep = evaluate(recon, gt, args.samples, args.seed, cam)
    print(rep.table())
    if args.out:
        Path(args.out).write_text(json.dumps(rep.as_dict(), indent=1, sort_keys=True) + "\n")


def cmd_contact_cut(args):
    mesh = io.load_mesh(args.mesh)
    if args.weights:
        weights = io.load_weights(args.weights)
    elif args.template and args.template_weights:
        weights = assign_skin_weights(mesh.vertices, io.load_mesh(args.template), io.load_weights(args.template_weights), args.cutoff).weights
    else:
        raise CLIError("need --weights, or --template with --template-weights")
    res = detect_self_contact(mesh, weights, args.eps, dilate=args.dilate)
    io.save_mesh(args.out, res.mesh)
    if args.marked:
        Path(args.marked).write_text(
            json.dumps({"contact": np.flatnonzero(res.contact).tolist(), "removed": np.flatnonzero(res.removed).tolist()}) + "\n"
        )
    print(f"contact {int(res.contact.sum())} removed {int(res.removed.sum())} faces {res.mesh.n_faces} watertight {res.watertight}")


def cmd_animate(args):
    mesh = io.load_mesh(args.mesh)
    weights = io.load_weights(args.weights)
    rig = io.load_rig(args.rig)
    poses = io.load_pose_track(args.poses)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(animate(mesh, weights, rig, poses)):
        io.save_ply(out_dir / f"frame_{i:04d}.ply", frame)
    print(f"frames {len(poses)}")


def cmd_demo(args):
    """Write a synthetic subject, pose, scan, cameras and pipeline config."""
    from . import synthetic
    from .rig import repose_mesh
    from .render import OrthoCamera

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subj = synthetic.make_subject(args.resolution)
    pose = synthetic.demo_pose()
    clothed = synthetic.body_mesh(0.01, args.resolution + 16, colored=True)
    cw = assign_skin_weights(clothed.vertices, subj.template, subj.weights).weights
    io.save_ply(out / "template.ply", subj.template)
    io.save_weights(out / "template_weights.json", subj.weights)
    io.save_rig(out / "rig.json", subj.rig)
    io.save_pose(out / "pose.json", pose)
    io.save_pose_track(out / "pose_track.json", synthetic.pose_track(10))
    io.save_landmarks(out / "landmarks.json", subj.landmarks)
    io.save_ply(out / "clothed_canonical.ply", clothed)
    io.save_weights(out / "clothed_weights.json", cw)
    io.save_ply(out / "scan.ply", repose_mesh(clothed, cw, subj.rig, pose))
    cams = [
        OrthoCamera.look_at((0, 0, 3), (0, 0, 0), width=256, height=256, scale=0.008, near=1.0, far=5.0),
        OrthoCamera.look_at((0, 0, -3), (0, 0, 0), width=256, height=256, scale=0.008, near=1.0, far=5.0),
    ]
    io.save_cameras(out / "cameras.json", cams)
    cfg = {
        "template": "template.ply", "weights": "template_weights.json", "rig": "rig.json", "pose": "pose.json",
        "scan": "scan.ply", "landmarks": "landmarks.json", "features": "rbf_per_axis", "output_dir": "canonical",
        "resolution": 128, "seed": args.seed,
    }
    (out / "pipeline.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    print(f"wrote demo data to {out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="canonavatar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file with option defaults")
        p.set_defaults(func=func)
        return p

    p = add("skin", cmd_skin, "apply or invert linear blend skinning on a mesh / point set")
    p.add_argument("mode", choices=["apply", "invert"])
    p.add_argument("--input")
    p.add_argument("--weights")
    p.add_argument("--rig")
    p.add_argument("--pose")
    p.add_argument("--out")

    p = add("canonicalize", cmd_canonicalize, "posed scan -> canonical mesh -> reposed mesh")
    for name, f in PipelineConfig.__dataclass_fields__.items():
        if name in ("seed",):
            continue
        flag = "--" + name.replace("_", "-")
        if name in ("bounds_min", "bounds_max"):
            p.add_argument(flag, type=float, nargs=3, dest=name)
        elif name in ("contact_cut",):
            p.add_argument(flag, action="store_true", default=None, dest=name)
        elif f.type in ("int",):
            p.add_argument(flag, type=int, dest=name)
        elif f.type in ("float",):
            p.add_argument(flag, type=float, dest=name)
        else:
            p.add_argument(flag, dest=name)

    p = add("extract", cmd_extract, "occupancy grid (or closed mesh) -> isosurface mesh")
    p.add_argument("--grid")
    p.add_argument("--mesh", help="closed mesh to voxelize instead of --grid")
    p.add_argument("--grid-out")
    p.add_argument("--bounds-min", type=float, nargs=3, default=(-1.28, -1.28, -1.28))
    p.add_argument("--bounds-max", type=float, nargs=3, default=(1.28, 1.28, 1.28))
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--tau", type=float, default=TAU)
    p.add_argument("--out")

    p = add("sample", cmd_sample, "training point samples or a sphere cloud from a mesh")
    p.add_argument("--mesh")
    p.add_argument("--regime", choices=["gaussian", "surface", "batches", "cloud"], default="surface")
    p.add_argument("--count", type=int)
    p.add_argument("--sigma", type=float, default=GAUSSIAN_SIGMA)
    p.add_argument("--radius", type=float, default=SPHERE_RADIUS)
    p.add_argument("--out")

    p = add("render", cmd_render, "render a sphere cloud to color/normal images")
    p.add_argument("--cloud")
    p.add_argument("--cameras")
    p.add_argument("--out-dir")
    _add_render_opts(p)

    p = add("refine", cmd_refine, "render-and-compare refinement of sphere attributes")
    p.add_argument("--cloud")
    p.add_argument("--cameras")
    p.add_argument("--target-color", action="append")
    p.add_argument("--target-normal", action="append")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay-every", type=int)
    p.add_argument("--optimizer", choices=["adaptive-rms", "plain-gd"], default="adaptive-rms")
    p.add_argument("--optimize-opacity", action="store_true")
    p.add_argument("--trace")
    p.add_argument("--out")
    _add_render_opts(p)

    p = add("metrics", cmd_metrics, "normal / P2S / Chamfer table")
    p.add_argument("--recon")
    p.add_argument("--gt")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--camera")
    p.add_argument("--resolution", type=int, default=NORMAL_RESOLUTION)
    p.add_argument("--out")

    p = add("contact-cut", cmd_contact_cut, "detect self-contact and cut the mesh")
    p.add_argument("--mesh")
    p.add_argument("--weights")
    p.add_argument("--template")
    p.add_argument("--template-weights")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--eps", type=float, default=CONTACT_EPS)
    p.add_argument("--dilate", type=int, default=1)
    p.add_argument("--marked")
    p.add_argument("--out")

    p = add("animate", cmd_animate, "canonical mesh + pose track -> mesh sequence")
    p.add_argument("--mesh")
    p.add_argument("--weights")
    p.add_argument("--rig")
    p.add_argument("--poses")
    p.add_argument("--out-dir")

    p = add("demo", cmd_demo, "write a synthetic subject and pipeline config")
    p.add_argument("--out-dir", default="demo")
    p.add_argument("--resolution", type=int, default=96)
    return parser


_REQUIRED = {
    "skin": ["input", "weights", "rig", "pose", "out"],
    "extract": ["out"],
    "sample": ["mesh", "out"],
    "render": ["cloud", "cameras", "out_dir"],
    "refine": ["cloud", "cameras", "out"],
    "metrics": ["recon", "gt"],
    "contact-cut": ["mesh", "out"],
    "animate": ["mesh", "weights", "rig", "poses", "out_dir"],
}


def _parse(parser, argv, state):
    args = parser.parse_args(argv)
    state["command"] = args.command
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise CLIError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        if args.command == "canonicalize":
            cfg.setdefault("base_dir", str(Path(args.config).parent))
        unknown = set(cfg) - known
        if unknown:
            raise CLIError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    missing = [m for m in _REQUIRED.get(args.command, []) if getattr(args, m, None) in (None, "")]
    if args.command == "extract" and not (args.grid or args.mesh):
        missing.append("grid or mesh")
    if missing:
        raise CLIError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def main(argv=None) -> int:
    parser = build_parser()
    state = {"command": "cli"}
    try:
        args = _parse(parser, argv, state)
        threads = os.environ.get(THREADS_ENV)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(int(threads)):
                args.func(args)
        else:
            args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {state['command']}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
