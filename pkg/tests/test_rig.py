import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from canonavatar.mesh import icosphere
from canonavatar.rig import (
    Joint,
    Pose,
    Rig,
    SkinningError,
    SkinWeightMatrix,
    animate,
    forward_kinematics,
    joint_positions,
    lbs_apply,
    lbs_invert,
    repose_mesh,
)
from oracles import fk_two_joint, random_rotations


def random_rig(rng, n=16):
    parents = [None] + [int(rng.integers(0, i)) for i in range(1, n)]
    return Rig([Joint(f"j{i}", p, tuple(rng.uniform(-0.5, 0.5, 3))) for i, p in enumerate(parents)])


def random_weights(rng, n, k, active=4):
    w = np.zeros((n, k))
    for i in range(n):
        cols = rng.choice(k, size=min(active, k), replace=False)
        w[i, cols] = rng.dirichlet(np.ones(len(cols)))
    return SkinWeightMatrix(w)


def translation(t):
    g = np.eye(4)
    g[:3, 3] = t
    return g


def test_identity_pose_gives_identity_transforms(rng):
    rig = random_rig(rng)
    g = forward_kinematics(rig, rig.identity_pose())
    assert np.array_equal(g, np.broadcast_to(np.eye(4), g.shape))


def test_two_joint_chain_rotate_root():
    rig = Rig.chain([[0, 0, 0], [0, 1, 0]])
    pose = Pose.from_rotvecs([[0, 0, np.pi / 2], [0, 0, 0]])
    assert np.allclose(joint_positions(rig, pose)[1], [-1, 0, 0], atol=1e-12)
    # hand-composed world matrices, with the rest correction applied
    w_root, w_child = fk_two_joint(np.pi / 2, [0, 1, 0])
    g = forward_kinematics(rig, pose)
    assert np.allclose(g[0], w_root, atol=1e-12)
    assert np.allclose(g[1], w_child @ np.linalg.inv(translation([0, 1, 0])), atol=1e-12)


def test_root_translation_is_pure_translation(rng):
    rig = random_rig(rng, 6)
    t = np.array([0.3, -0.2, 1.1])
    g = forward_kinematics(rig, Pose(Pose.identity(6).rotations, t))
    for gk in g:
        assert np.allclose(gk, translation(t), atol=1e-12)


def test_lbs_identity_exact(rng):
    p = rng.normal(size=(50, 3))
    w = random_weights(rng, 50, 5)
    out = lbs_apply(p, w, np.broadcast_to(np.eye(4), (5, 4, 4)))
    assert np.array_equal(out, p)


def test_lbs_single_bone_translation(rng):
    p = rng.normal(size=(20, 3))
    g = np.stack([np.eye(4), translation([0.3, 0, 0])])
    out = lbs_apply(p, SkinWeightMatrix.one_hot(np.ones(20, int), 2), g)
    assert np.allclose(out - p, [0.3, 0, 0], atol=1e-15)


def test_lbs_half_blend_of_translation(rng):
    p = rng.normal(size=(20, 3))
    t = np.array([0.2, -0.4, 0.6])
    g = np.stack([np.eye(4), translation(t)])
    out = lbs_apply(p, SkinWeightMatrix(np.full((20, 2), 0.5)), g)
    assert np.allclose(out - p, t / 2, atol=1e-15)


def test_lbs_invert_identity(rng):
    p = rng.normal(size=(30, 3))
    res = lbs_invert(p, random_weights(rng, 30, 3), np.broadcast_to(np.eye(4), (3, 4, 4)))
    assert res.valid.all()
    assert np.allclose(res.points, p, atol=1e-15)


def test_lbs_invert_hand_example():
    g = translation([1, 0, 0])
    g[:3, :3] = Rotation.from_rotvec([0, 0, np.pi / 2]).as_matrix()
    res = lbs_invert([[1.0, 0, 0]], SkinWeightMatrix([[1.0]]), g[None])
    assert np.allclose(res.points, [[0, 0, 0]], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
def test_lbs_round_trip_property(seed, k):
    rng = np.random.default_rng(seed)
    g = np.tile(np.eye(4), (k, 1, 1))
    g[:, :3, :3] = Rotation.from_quat(random_rotations(rng, k)).as_matrix()
    g[:, :3, 3] = rng.uniform(-1, 1, (k, 3))
    p = rng.uniform(-1, 1, (200, 3))
    w = random_weights(rng, 200, k, active=min(k, 3))
    posed = lbs_apply(p, w, g)
    inv = lbs_invert(posed, w, g)
    ok = inv.valid
    assert np.abs(inv.points[ok] - p[ok]).max(initial=0) < 1e-6
    # forward of the inverse also returns the posed points
    assert np.abs(lbs_apply(inv.points[ok], w.subset(ok), g) - posed[ok]).max(initial=0) < 1e-6


def test_lbs_invert_flags_singular():
    # half identity, half 180 deg about z: the blend collapses x and y
    g = np.stack([np.eye(4), np.eye(4)])
    g[1, :3, :3] = np.diag([-1.0, -1.0, 1.0])
    res = lbs_invert([[0.5, 0.5, 0.5]], SkinWeightMatrix([[0.5, 0.5]]), g)
    assert not res.valid[0]
    assert np.allclose(res.points[0], [0.5, 0.5, 0.5])
    assert res.condition[0] > 1e8


def test_single_bone_rigid_preserves_distances(rng):
    p = rng.normal(size=(40, 3))
    rig = random_rig(rng, 5)
    pose = Pose(random_rotations(rng, 5), rng.normal(size=3))
    g = forward_kinematics(rig, pose)
    out = lbs_apply(p, SkinWeightMatrix.one_hot(np.full(40, 3), 5), g)
    assert np.abs(pdist(out) - pdist(p)).max() < 1e-6


def test_deep_chain_rotations_orthonormal(rng):
    rig = Rig.chain(np.cumsum(rng.uniform(-0.2, 0.2, (21, 3)), axis=0))
    g = forward_kinematics(rig, Pose(random_rotations(rng, 21)))
    r = g[:, :3, :3]
    err = np.abs(np.einsum("kji,kjl->kil", r, r) - np.eye(3)).max()
    assert err < 1e-5


def test_lbs_linear_in_translation_blend(rng):
    # blending translations: output offset equals the weighted sum of offsets
    t = rng.normal(size=(3, 3))
    g = np.stack([translation(x) for x in t])
    w = random_weights(rng, 25, 3, 3)
    p = rng.normal(size=(25, 3))
    assert np.allclose(lbs_apply(p, w, g) - p, w.weights @ t, atol=1e-14)


def test_repose_identity_and_rigid(rng):
    mesh = icosphere(0.3, 2)
    rig = random_rig(rng, 4)
    w = random_weights(rng, mesh.n_vertices, 4)
    same = repose_mesh(mesh, w, rig, rig.identity_pose())
    assert np.array_equal(same.faces, mesh.faces)
    assert np.abs(same.vertices - mesh.vertices).max() < 1e-7
    root_only = SkinWeightMatrix.one_hot(np.zeros(mesh.n_vertices, int), 4)
    moved = repose_mesh(mesh, root_only, rig, Pose(random_rotations(rng, 4), rng.normal(size=3)))
    e = mesh.edges()
    before = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    after = np.linalg.norm(moved.vertices[e[:, 0]] - moved.vertices[e[:, 1]], axis=1)
    assert np.abs(after - before).max() < 1e-6


def test_animate_track_topology(rng):
    from canonavatar.synthetic import body_rig, pose_track

    rig = body_rig()
    mesh = icosphere(0.2, 2)
    w = random_weights(rng, mesh.n_vertices, rig.n_joints)
    frames = animate(mesh, w, rig, pose_track(10))
    assert len(frames) == 10
    for f in frames:
        assert np.array_equal(f.faces, mesh.faces)
        assert f.vertices.shape == mesh.vertices.shape


def test_unassigned_weights_raise():
    w = SkinWeightMatrix([[0.0, 0.0], [1.0, 0.0]], assigned=[False, True])
    with pytest.raises(SkinningError):
        lbs_apply(np.zeros((2, 3)), w, np.tile(np.eye(4), (2, 1, 1)))


def test_validation_errors():
    with pytest.raises(ValueError):
        Pose([[1.0, 0.1, 0, 0]])
    with pytest.raises(ValueError):
        SkinWeightMatrix([[0.6, 0.6]])
    with pytest.raises(ValueError):
        SkinWeightMatrix([[1.2, -0.2]])
    with pytest.raises(ValueError):
        Rig([Joint("a", None, (0, 0, 0)), Joint("b", None, (0, 1, 0))])
    with pytest.raises(ValueError):
        Rig([Joint("a", 1, (0, 0, 0)), Joint("b", 0, (0, 1, 0))])
    rig = Rig.chain([[0, 0, 0], [0, 1, 0]])
    with pytest.raises(ValueError):
        forward_kinematics(rig, Pose.identity(3))
    with pytest.raises(SkinningError):
        lbs_apply(np.zeros((3, 3)), SkinWeightMatrix(np.ones((2, 1))), np.eye(4)[None])


def test_serialization_round_trip(rng):
    rig = random_rig(rng, 7)
    assert np.array_equal(Rig.from_dict(rig.to_dict()).rest_positions, rig.rest_positions)
    pose = Pose(random_rotations(rng, 7), rng.normal(size=3))
    back = Pose.from_dict(pose.to_dict())
    assert np.array_equal(back.rotations, pose.rotations)
    w = random_weights(rng, 10, 7)
    assert np.array_equal(SkinWeightMatrix.from_dict(w.to_dict()).weights, w.weights)
