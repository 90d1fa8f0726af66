import json

import numpy as np
import pytest

from canonavatar import io
from canonavatar.cli import main
from canonavatar.mesh import icosphere


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_error_is_single_line(tmp_path, capsys):
    code, out, err = run(["metrics", "--recon", tmp_path / "missing.ply", "--gt", tmp_path / "x.ply"], capsys)
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("error: metrics: ")


def test_usage_errors_are_single_line(capsys):
    for argv in (["frobnicate"], ["render", "--bogus", "1"], ["render"], []):
        code, _, err = run(argv, capsys)
        assert code == 1 and err.count("\n") == 1 and err.startswith("error: ")
    code, _, err = run(["render"], capsys)
    assert "--cloud" in err and err.startswith("error: render: ")


def test_config_supplies_defaults(tmp_path, capsys):
    io.save_ply(tmp_path / "s.ply", icosphere(0.4, 3))
    cfg = {"mesh": str(tmp_path / "s.ply"), "out": str(tmp_path / "a.bin"), "regime": "gaussian", "count": 100}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = run(["sample", "--config", tmp_path / "c.json", "--seed", 3], capsys)
    assert code == 0, err
    # command-line flags win over the config
    code, _, _ = run(["sample", "--config", tmp_path / "c.json", "--count", 50, "--out", tmp_path / "b.bin"], capsys)
    header = json.loads((tmp_path / "b.bin").read_bytes().split(b"\n", 1)[0])
    assert header["shape"] == [50, 3]
    (tmp_path / "bad.json").write_text(json.dumps({"mesh": "x", "colour": 1}))
    code, _, err = run(["sample", "--config", tmp_path / "bad.json"], capsys)
    assert code == 1 and "colour" in err


def test_extract_and_metrics(tmp_path, capsys):
    io.save_ply(tmp_path / "s.ply", icosphere(0.4, 3))
    code, out, err = run(
        ["extract", "--mesh", tmp_path / "s.ply", "--resolution", 40, "--bounds-min", -0.6, -0.6, -0.6,
         "--bounds-max", 0.6, 0.6, 0.6, "--grid-out", tmp_path / "g.grid", "--out", tmp_path / "e.ply"],
        capsys,
    )
    assert code == 0, err
    assert out.startswith("vertices")
    code, out, err = run(["metrics", "--recon", tmp_path / "e.ply", "--gt", tmp_path / "s.ply", "--samples", 2000, "--resolution", 64, "--out", tmp_path / "m.json"], capsys)
    assert code == 0, err
    rep = json.loads((tmp_path / "m.json").read_text())
    assert rep["chamfer_cm"] < 2 * 1.2 / 40 * 100
    assert out.splitlines()[0].split() == ["Normal", "P2S", "Chamfer"]


def test_refine_needs_one_target_per_camera(tmp_path, capsys):
    from canonavatar.render import OrthoCamera, SphereCloud

    io.save_cameras(tmp_path / "c.json", [OrthoCamera(), OrthoCamera()])
    io.save_cloud_ply(tmp_path / "cl.ply", SphereCloud(np.zeros((1, 3)), np.zeros((1, 3)), np.array([[0, 0, 1.0]]), np.ones(1)))
    code, _, err = run(["refine", "--cloud", tmp_path / "cl.ply", "--cameras", tmp_path / "c.json", "--out", tmp_path / "o.ply"], capsys)
    assert code == 1 and "2 cameras but 0 target" in err
