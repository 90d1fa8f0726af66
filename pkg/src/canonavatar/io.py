"""File formats.

- meshes: OBJ (``v x y z [r g b]`` plus ``vn``) and binary little-endian PLY
- rig, pose, pose track, skin weights, landmarks, cameras: JSON
- grids and feature arrays: one JSON header line, then little-endian float32 payload
- images: 8-bit PNG and float32 PFM
- loss traces: CSV
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .field import ScalarGrid
from .mesh import TriMesh
from .render import OrthoCamera, SphereCloud
from .rig import Pose, Rig, SkinWeightMatrix


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# JSON documents


def save_rig(path, rig: Rig):
    _write_json(path, rig.to_dict())


def load_rig(path) -> Rig:
    return Rig.from_dict(_read_json(path))


def save_weights(path, weights: SkinWeightMatrix):
    _write_json(path, weights.to_dict())


def load_weights(path) -> SkinWeightMatrix:
    return SkinWeightMatrix.from_dict(_read_json(path))


def save_pose(path, pose: Pose):
    _write_json(path, pose.to_dict())


def load_pose(path) -> Pose:
    return Pose.from_dict(_read_json(path))


def save_pose_track(path, poses: Iterable[Pose]):
    _write_json(path, {"poses": [p.to_dict() for p in poses]})


def load_pose_track(path) -> list:
    d = _read_json(path)
    return [Pose.from_dict(p) for p in d["poses"]]


def save_landmarks(path, landmarks):
    _write_json(path, np.asarray(landmarks, dtype=np.float64).tolist())


def load_landmarks(path) -> np.ndarray:
    lm = np.asarray(_read_json(path), dtype=np.float64)
    if lm.ndim != 2 or lm.shape[1] != 3:
        raise ValueError(f"{path}: landmarks must be a JSON array of 3-vectors")
    return lm


def save_cameras(path, cams):
    _write_json(path, {"cameras": [c.to_dict() for c in cams]})


def load_cameras(path) -> list:
    d = _read_json(path)
    items = d["cameras"] if isinstance(d, dict) and "cameras" in d else (d if isinstance(d, list) else [d])
    return [OrthoCamera.from_dict(c) for c in items]


# ---------------------------------------------------------------------------
# binary arrays with a JSON header line


def _write_header_blob(path, header: dict, payload: np.ndarray):
    data = np.ascontiguousarray(payload, dtype="<f4")
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        f.write(data.tobytes())


def _read_header_blob(path):
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("ascii"))
    if header.get("dtype", "<f4") != "<f4":
        raise ValueError(f"{path}: unsupported dtype {header.get('dtype')}")
    return header, np.frombuffer(raw[nl + 1 :], dtype="<f4")


def save_grid(path, grid: ScalarGrid):
    header = {
        "resolution": list(grid.resolution),
        "origin": [float(x) for x in grid.origin],
        "spacing": grid.spacing,
        "dtype": "<f4",
        "order": "C",
    }
    _write_header_blob(path, header, grid.values)


def load_grid(path) -> ScalarGrid:
    header, data = _read_header_blob(path)
    res = tuple(int(r) for r in header["resolution"])
    if data.size != int(np.prod(res)):
        raise ValueError(f"{path}: payload has {data.size} values, header says {res}")
    return ScalarGrid(data.reshape(res).astype(np.float64), header["origin"], header["spacing"])


def save_features(path, features: np.ndarray, kind: str, length_scale: float = 1.0):
    f = np.asarray(features)
    _write_header_blob(path, {"shape": list(f.shape), "kind": kind, "length_scale": length_scale, "dtype": "<f4"}, f)


def load_features(path):
    header, data = _read_header_blob(path)
    return data.reshape(header["shape"]).astype(np.float64), header


# ---------------------------------------------------------------------------
# meshes


def save_obj(path, mesh: TriMesh, write_normals: bool = True):
    lines = []
    v = mesh.vertices
    if mesh.colors is not None:
        for p, c in zip(v, mesh.colors):
            lines.append("v %r %r %r %r %r %r" % (*map(float, p), *map(float, c)))
    else:
        lines.extend("v %r %r %r" % tuple(map(float, p)) for p in v)
    if write_normals and mesh.normals is not None:
        lines.extend("vn %r %r %r" % tuple(map(float, n)) for n in mesh.normals)
        lines.extend("f {0}//{0} {1}//{1} {2}//{2}".format(*(f + 1)) for f in mesh.faces)
    else:
        lines.extend("f %d %d %d" % tuple(f + 1) for f in mesh.faces)
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    verts, cols, norms, faces = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            vals = [float(x) for x in parts[1:]]
            verts.append(vals[:3])
            if len(vals) >= 6:
                cols.append(vals[3:6])
        elif parts[0] == "vn":
            norms.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(cols) if cols and len(cols) == len(verts) else None
    normals = np.asarray(norms) if norms and len(norms) == len(verts) else None
    return TriMesh(v, np.asarray(faces, dtype=np.int64).reshape(-1, 3), normals, colors)


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
    "float": "<f4", "double": "<f8", "int8": "i1", "uint8": "u1", "int32": "<i4", "uint32": "<u4",
    "float32": "<f4", "float64": "<f8",
}


def _ply_bytes(vertex_fields: list, faces: Optional[np.ndarray]) -> bytes:
    n = len(vertex_fields[0][2]) if vertex_fields else 0
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    dtype = []
    for name, ply_type, _ in vertex_fields:
        header.append(f"property {ply_type} {name}")
        dtype.append((name, _PLY_TYPES[ply_type]))
    nf = 0 if faces is None else len(faces)
    header.append(f"element face {nf}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")
    rec = np.empty(n, dtype=dtype)
    for name, _, values in vertex_fields:
        rec[name] = values
    body = rec.tobytes()
    if nf:
        frec = np.empty(nf, dtype=[("n", "u1"), ("i", "<i4", (3,))])
        frec["n"] = 3
        frec["i"] = faces
        body += frec.tobytes()
    return ("\n".join(header) + "\n").encode("ascii") + body


def save_ply(path, mesh: TriMesh):
    v, fields = mesh.vertices, []
    fields += [("x", "double", v[:, 0]), ("y", "double", v[:, 1]), ("z", "double", v[:, 2])]
    if mesh.normals is not None:
        n = mesh.normals
        fields += [("nx", "double", n[:, 0]), ("ny", "double", n[:, 1]), ("nz", "double", n[:, 2])]
    if mesh.colors is not None:
        c = mesh.colors
        fields += [("red", "double", c[:, 0]), ("green", "double", c[:, 1]), ("blue", "double", c[:, 2])]
    Path(path).write_bytes(_ply_bytes(fields, mesh.faces))


def save_cloud_ply(path, cloud: SphereCloud):
    """Sphere cloud as a PLY point set with float color/normal/opacity; radius in a comment-free property."""
    c, n, col = cloud.centers, cloud.normals, cloud.colors
    fields = [
        ("x", "double", c[:, 0]), ("y", "double", c[:, 1]), ("z", "double", c[:, 2]),
        ("nx", "double", n[:, 0]), ("ny", "double", n[:, 1]), ("nz", "double", n[:, 2]),
        ("red", "double", col[:, 0]), ("green", "double", col[:, 1]), ("blue", "double", col[:, 2]),
        ("opacity", "double", cloud.opacities), ("radius", "double", np.full(len(cloud), cloud.radius)),
    ]
    Path(path).write_bytes(_ply_bytes(fields, None))


def _read_ply(path):
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    lines = raw[:end].decode("ascii").splitlines()
    if lines[0] != "ply" or "binary_little_endian" not in lines[1]:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    elements = []
    for ln in lines[2:]:
        parts = ln.split()
        if parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])
    offset = end
    out = {}
    for name, count, props in elements:
        if props and props[0][0] == "list":
            cnt_t, idx_t = _PLY_TYPES[props[0][1]], _PLY_TYPES[props[0][2]]
            dt = np.dtype([("n", cnt_t), ("i", idx_t, (3,))])
            arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
            if count and np.any(arr["n"] != 3):
                raise ValueError(f"{path}: only triangle faces are supported")
            out[name] = arr["i"].astype(np.int64)
        else:
            dt = np.dtype([(p[1], _PLY_TYPES[p[0]]) for p in props])
            out[name] = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
        offset += dt.itemsize * count
    return out


def load_ply(path) -> TriMesh:
    d = _read_ply(path)
    v = d["vertex"]
    names = v.dtype.names
    pos = np.stack([v["x"], v["y"], v["z"]], 1).astype(np.float64)
    normals = np.stack([v["nx"], v["ny"], v["nz"]], 1).astype(np.float64) if "nx" in names else None
    colors = None
    if "red" in names:
        colors = np.stack([v["red"], v["green"], v["blue"]], 1).astype(np.float64)
        if v.dtype["red"] == np.uint8:
            colors /= 255.0
    faces = d.get("face", np.zeros((0, 3), dtype=np.int64))
    return TriMesh(pos, faces, normals, colors)


def load_cloud_ply(path, radius: Optional[float] = None) -> SphereCloud:
    v = _read_ply(path)["vertex"]
    names = v.dtype.names
    c = np.stack([v["x"], v["y"], v["z"]], 1).astype(np.float64)
    n = np.stack([v["nx"], v["ny"], v["nz"]], 1).astype(np.float64)
    col = np.stack([v["red"], v["green"], v["blue"]], 1).astype(np.float64)
    if v.dtype["red"] == np.uint8:
        col /= 255.0
    op = v["opacity"].astype(np.float64) if "opacity" in names else np.ones(len(c))
    if radius is None:
        radius = float(v["radius"][0]) if "radius" in names and len(v) else 0.01
    return SphereCloud(c, col, n, op, radius)


def save_mesh(path, mesh: TriMesh):
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        save_obj(path, mesh)
    elif suffix == ".ply":
        save_ply(path, mesh)
    else:
        raise ValueError(f"unknown mesh format {suffix!r}")


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".ply":
        return load_ply(path)
    raise ValueError(f"unknown mesh format {suffix!r}")


def load_points(path) -> np.ndarray:
    """Points from a mesh file (its vertices), a .npy array, or a JSON array."""
    suffix = Path(path).suffix.lower()
    if suffix in (".obj", ".ply"):
        return load_mesh(path).vertices
    if suffix == ".npy":
        return np.load(path).astype(np.float64).reshape(-1, 3)
    return np.asarray(_read_json(path), dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# images and traces


def save_png(path, image):
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def save_pfm(path, image):
    img = np.asarray(image, dtype="<f4")
    color = img.ndim == 3 and img.shape[2] == 3
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())  # bottom row first


def load_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    color = parts[0].strip() == b"PF"
    w, h = (int(x) for x in parts[1].split())
    scale = float(parts[2])
    dt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dt)
    img = data.reshape((h, w, 3) if color else (h, w))[::-1]
    return img.astype(np.float64)


def save_trace_csv(path, trace):
    cols = ["step", "occupancy_3d", "normal_3d", "color_3d", "normal_2d", "color_2d", "total"]
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(cols)
        for i, rep in enumerate(trace):
            d = rep.as_dict()
            wr.writerow([i] + [repr(float(d[c])) for c in cols[1:]])
