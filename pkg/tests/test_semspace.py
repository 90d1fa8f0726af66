import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canonavatar.field import sample_surface
from canonavatar.geometry import SurfaceIndex
from canonavatar.mesh import TriMesh, icosphere
from canonavatar.rig import Pose, Rig, SkinWeightMatrix, forward_kinematics, lbs_apply, repose_mesh
from canonavatar.semspace import (
    FeatureKind,
    assign_skin_weights,
    feature_dim,
    semdf_to_canonical,
    spatial_feature,
    spatial_features,
)
from oracles import brute_distance_vec, tube_mesh


def bent_tube():
    v, f = tube_mesh(96, 180)
    mesh = TriMesh(v, f)
    s = 1 / (1 + np.exp(-(v[:, 0] - 0.3) / 0.04))
    w = SkinWeightMatrix(np.stack([1 - s, s], 1))
    rig = Rig.chain([[0, 0, 0], [0.3, 0, 0]])
    pose = Pose.from_rotvecs([[0, 0, 0], [0, 0, np.pi / 3]])
    return mesh, w, rig, pose


def test_query_at_vertex_returns_row(rng):
    mesh = icosphere(0.5, 2)
    w = SkinWeightMatrix(rng.dirichlet(np.ones(4), mesh.n_vertices))
    idx = rng.choice(mesh.n_vertices, 20, replace=False)
    sem = assign_skin_weights(mesh.vertices[idx], mesh, w)
    assert sem.assigned.all()
    assert np.allclose(sem.distance, 0, atol=1e-12)
    assert np.allclose(sem.weights.weights, w.weights[idx], atol=1e-12)


def test_centroid_of_one_hot_triangle():
    mesh = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    w = SkinWeightMatrix(np.eye(3))
    sem = assign_skin_weights([[1 / 3, 1 / 3, 0.0]], mesh, w)
    assert np.allclose(sem.weights.weights[0], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_beyond_cutoff_unassigned(rng):
    mesh = icosphere(0.5, 2)
    w = SkinWeightMatrix(rng.dirichlet(np.ones(3), mesh.n_vertices))
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * (0.5 + 0.1 + 1e-3)
    d = brute_distance_vec(pts, mesh.vertices, mesh.faces)
    assert (d > 0.1).all()  # oracle confirms every point is past the cutoff
    sem = assign_skin_weights(pts, mesh, w, cutoff=0.1)
    assert not sem.assigned.any()
    assert (sem.weights.weights == 0).all()
    inside = assign_skin_weights(dirs * 0.55, mesh, w, cutoff=0.1)
    assert inside.assigned.all()


def test_assigned_rows_convex(rng):
    mesh = icosphere(0.5, 3)
    w = SkinWeightMatrix(rng.dirichlet(np.ones(6) * 0.3, mesh.n_vertices))
    sem = assign_skin_weights(rng.uniform(-0.7, 0.7, (2000, 3)), mesh, w, cutoff=0.15)
    ww = sem.weights.weights[sem.assigned]
    assert (ww >= 0).all()
    assert np.abs(ww.sum(axis=1) - 1).max() < 1e-5


def test_semdf_identity_pose(rng):
    mesh = icosphere(0.5, 2)
    w = SkinWeightMatrix(rng.dirichlet(np.ones(2), mesh.n_vertices))
    rig = Rig.chain([[0, 0, 0], [0, 0.3, 0]])
    pts = rng.uniform(-0.6, 0.6, (500, 3))
    sem = semdf_to_canonical(pts, mesh, w, rig, rig.identity_pose())
    assert np.allclose(sem.positions[sem.assigned], pts[sem.assigned], atol=1e-12)


def test_semdf_surface_samples_land_on_canonical():
    mesh, w, rig, pose = bent_tube()
    posed = repose_mesh(mesh, w, rig, pose)
    smp = sample_surface(posed, 5000, seed=1).positions
    sem = semdf_to_canonical(smp, posed, w, rig, pose)
    assert sem.assigned.all()
    # the canonical tube is known analytically; its mesh is the reference
    d = SurfaceIndex(mesh).distance(sem.positions)
    assert d.max() < 1e-4


def test_semdf_round_trip_and_far_points(rng):
    mesh, w, rig, pose = bent_tube()
    posed = repose_mesh(mesh, w, rig, pose)
    pts = np.concatenate([sample_surface(posed, 1000, seed=3).positions + rng.normal(0, 0.02, (1000, 3)), [[5.0, 5.0, 5.0]]])
    sem = semdf_to_canonical(pts, posed, w, rig, pose)
    ok = sem.assigned
    assert not ok[-1] and np.array_equal(sem.positions[-1], [5.0, 5.0, 5.0])
    back = lbs_apply(sem.positions[ok], sem.weights.subset(ok), forward_kinematics(rig, pose))
    assert np.abs(back - pts[ok]).max() < 1e-5


def test_feature_identities():
    lm = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
    f_rbf = spatial_feature(lm[1], lm, "rbf")
    f_l2 = spatial_feature(lm[1], lm, "l2")
    assert f_rbf[1] == 1.0 and f_l2[1] == 0.0
    p = np.array([np.log(2), 0, 0])
    assert np.isclose(spatial_feature(p, lm, "rbf")[0], 0.5, atol=1e-15)
    assert np.array_equal(spatial_feature([0.3, -2, 7], lm, "xyz"), [0.3, -2, 7])


def test_feature_dimensions():
    lm = np.random.default_rng(0).normal(size=(57, 3))
    pts = np.zeros((4, 3))
    for kind, dim in (("xyz", 3), ("l2", 57), ("rbf", 57), ("rbf_per_axis", 171)):
        assert spatial_features(pts, lm, kind).shape == (4, dim)
        assert feature_dim(kind, 57) == dim
    with pytest.raises(ValueError):
        FeatureKind("gaussian")


@settings(max_examples=50, deadline=None)
@given(
    direction=st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda d: np.linalg.norm(d) > 1e-3),
    r0=st.floats(0, 2),
    dr=st.floats(1e-6, 1),
)
def test_rbf_monotone_in_distance(direction, r0, dr):
    d = np.asarray(direction) / np.linalg.norm(direction)
    lm = np.array([[0.1, -0.2, 0.3]])
    near = spatial_feature(lm[0] + r0 * d, lm, "rbf")[0]
    far = spatial_feature(lm[0] + (r0 + dr) * d, lm, "rbf")[0]
    assert far <= near
    nearx = spatial_feature(lm[0] + r0 * d, lm, "rbf_per_axis")
    farx = spatial_feature(lm[0] + (r0 + dr) * d, lm, "rbf_per_axis")
    assert (farx <= nearx).all()


def test_length_scale_divides_distance():
    lm = np.zeros((1, 3))
    assert np.isclose(spatial_feature([2 * np.log(2), 0, 0], lm, "rbf", length_scale=2.0)[0], 0.5)
