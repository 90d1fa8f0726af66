import json

import numpy as np
import pytest

from canonavatar import io
from canonavatar.field import AnalyticSphere, GridSpec, evaluate_on_grid, extract_isosurface
from canonavatar.mesh import icosphere
from canonavatar.pipeline import PipelineConfig, PipelineError, pipeline_canonicalize
from canonavatar.rig import Rig, SkinWeightMatrix, repose_mesh
from canonavatar.synthetic import demo_pose, make_subject


def write_sphere_case(tmp_path):
    template = icosphere(0.5, 3)
    rig = Rig.chain([[0, 0, 0], [0, 0.3, 0]])
    w = SkinWeightMatrix(np.stack([np.full(template.n_vertices, 0.5)] * 2, 1))
    spec = GridSpec((-1,) * 3, (1,) * 3, 48)
    io.save_ply(tmp_path / "template.ply", template)
    io.save_weights(tmp_path / "weights.json", w)
    io.save_rig(tmp_path / "rig.json", rig)
    io.save_pose(tmp_path / "pose.json", rig.identity_pose())
    io.save_grid(tmp_path / "canon.grid", evaluate_on_grid(AnalyticSphere(0.5), spec).occupancy)
    return PipelineConfig(
        template="template.ply", weights="weights.json", rig="rig.json", pose="pose.json",
        canonical_grid="canon.grid", output_dir="out", bounds_min=(-1,) * 3, bounds_max=(1,) * 3,
        resolution=48, base_dir=str(tmp_path),
    )


def test_identity_pose_sphere(tmp_path):
    cfg = write_sphere_case(tmp_path)
    out = pipeline_canonicalize(cfg)
    expected = extract_isosurface(io.load_grid(tmp_path / "canon.grid"))
    assert np.array_equal(out.canonical_mesh.faces, expected.faces)
    assert np.allclose(out.canonical_mesh.vertices, expected.vertices, atol=0)
    assert np.abs(out.reposed_mesh.vertices - out.canonical_mesh.vertices).max() < 1e-7
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest["written"]) == {"canonical_mesh", "weights", "reposed_mesh"}


def test_missing_landmarks_named(tmp_path):
    cfg = write_sphere_case(tmp_path)
    cfg.features = "rbf"
    with pytest.raises(PipelineError, match="landmarks"):
        pipeline_canonicalize(cfg)
    cfg.landmarks = "nope.json"
    with pytest.raises(PipelineError, match="landmarks"):
        pipeline_canonicalize(cfg)


def test_need_scan_or_grid(tmp_path):
    cfg = write_sphere_case(tmp_path)
    cfg.canonical_grid = None
    with pytest.raises(PipelineError, match="scan"):
        pipeline_canonicalize(cfg)


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"template": "t.ply", "colour": 1}))
    with pytest.raises(ValueError, match="colour"):
        PipelineConfig.from_json(tmp_path / "c.json")


@pytest.fixture(scope="module")
def scan_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scan")
    subj = make_subject(48)
    pose = demo_pose(0.6)
    io.save_ply(tmp / "template.ply", subj.template)
    io.save_weights(tmp / "weights.json", subj.weights)
    io.save_rig(tmp / "rig.json", subj.rig)
    io.save_pose(tmp / "pose.json", pose)
    io.save_landmarks(tmp / "lm.json", subj.landmarks)
    io.save_ply(tmp / "scan.ply", repose_mesh(subj.template, subj.weights, subj.rig, pose))
    cfg = PipelineConfig(
        template="template.ply", weights="weights.json", rig="rig.json", pose="pose.json", scan="scan.ply",
        landmarks="lm.json", features="rbf_per_axis", output_dir="out", resolution=64, base_dir=str(tmp),
    )
    return tmp, cfg, pipeline_canonicalize(cfg)


def test_scan_run_writes_everything(scan_run):
    tmp, cfg, out = scan_run
    for key in ("canonical_scan", "grid", "canonical_mesh", "weights", "reposed_mesh", "features"):
        assert key in out.written
    feats, header = io.load_features(tmp / "out" / "features.bin")
    assert feats.shape == (out.canonical_mesh.n_vertices, 171) and header["kind"] == "rbf_per_axis"
    assert out.unassigned_scan_vertices == 0


def test_intermediates_round_trip(scan_run, tmp_path):
    tmp, cfg, out = scan_run
    # rerun from the written grid: downstream outputs are byte-identical
    cfg2 = PipelineConfig(**{**cfg.__dict__, "scan": None, "canonical_grid": str(tmp / "out" / "canonical_occupancy.grid"), "output_dir": str(tmp_path / "again")})
    pipeline_canonicalize(cfg2)
    for name in ("canonical_mesh.ply", "canonical_weights.json", "reposed_mesh.ply", "features.bin"):
        assert (tmp / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
    # and the isosurface of the re-read grid equals the written mesh
    mesh = extract_isosurface(io.load_grid(tmp / "out" / "canonical_occupancy.grid"))
    assert np.array_equal(mesh.vertices, io.load_ply(tmp / "out" / "canonical_mesh.ply").vertices)
