import numpy as np

from canonavatar.contact import detect_self_contact
from canonavatar.mesh import TriMesh, grid_plane, icosphere
from canonavatar.rig import SkinWeightMatrix
from oracles import brute_distance_vec


def two_squares(gap, parts=(0, 1), n=6):
    a = grid_plane(1.0, n, z=0.0)
    b = grid_plane(1.0, n, z=gap, flip=True)
    v = np.concatenate([a.vertices, b.vertices])
    f = np.concatenate([a.faces, b.faces + a.n_vertices])
    labels = np.repeat(parts, a.n_vertices)
    return TriMesh(v, f), SkinWeightMatrix.one_hot(labels, 2)


def test_far_squares_nothing_marked():
    mesh, w = two_squares(1.0)
    res = detect_self_contact(mesh, w, 0.01)
    assert not res.contact.any() and res.mesh.n_faces == mesh.n_faces


def test_close_squares_all_marked_and_removed():
    mesh, w = two_squares(0.005)
    res = detect_self_contact(mesh, w, 0.01)
    # brute force: every vertex of one sheet has a partner on the other within eps
    half = mesh.n_vertices // 2
    top = mesh.submesh(np.arange(mesh.n_faces) >= mesh.n_faces // 2)
    assert (brute_distance_vec(mesh.vertices[:half], top.vertices, top.faces) < 0.01).all()
    assert res.contact.all()
    assert res.mesh.n_faces == 0


def test_same_part_not_marked():
    mesh, w = two_squares(0.005, parts=(1, 1))
    res = detect_self_contact(mesh, w, 0.01)
    assert not res.contact.any() and res.mesh.n_faces == mesh.n_faces


def test_part_seam_on_one_surface_not_marked():
    # a single connected sheet whose halves belong to different parts
    sheet = grid_plane(1.0, 100)
    labels = (sheet.vertices[:, 0] > 0).astype(int)
    res = detect_self_contact(sheet, SkinWeightMatrix.one_hot(labels, 2), 0.011)
    assert not res.contact.any()
    # disabling the geodesic guard falls back to the plain part test and marks the seam
    plain = detect_self_contact(sheet, SkinWeightMatrix.one_hot(labels, 2), 0.011, min_geodesic=0)
    assert plain.contact.any()


def test_cut_closed_mesh_becomes_open():
    a = icosphere(0.2, 4)
    b = icosphere(0.2, 4, center=(0.405, 0, 0))
    mesh = TriMesh(np.concatenate([a.vertices, b.vertices]), np.concatenate([a.faces, b.faces + a.n_vertices]))
    assert mesh.is_watertight()
    w = SkinWeightMatrix.one_hot(np.repeat([0, 1], a.n_vertices), 2)
    res = detect_self_contact(mesh, w, 0.01)
    assert res.contact.any() and not res.contact.all()
    # only the touching caps are marked
    assert np.abs(mesh.vertices[res.contact, 0] - 0.2025).max() < 0.02
    assert res.removed.sum() >= res.contact.sum()
    assert 0 < res.mesh.n_faces < mesh.n_faces
    assert not res.watertight
