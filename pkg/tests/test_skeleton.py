import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakpose.skeleton import (
    MotionSequence,
    Pose2D,
    Pose3D,
    SkeletonTopology,
    bone_length,
    bone_lengths,
    default_topology,
    interpolate_motion,
    sample_pose,
    second_difference_bound,
    step_bound,
)

seeds = st.integers(0, 2**31 - 1)


def test_default_topology_shape(topology):
    assert topology.n_joints == 15
    assert len(topology.bones) == 14
    assert topology.joint_names[topology.root] == "torso"


def test_symmetric_pairs_are_partners(topology):
    lefts = [a for a, _ in topology.symmetric_pairs]
    rights = [b for _, b in topology.symmetric_pairs]
    assert len(set(lefts)) == len(lefts) and len(set(rights)) == len(rights)
    assert not set(lefts) & set(rights)
    for a, b in topology.symmetric_pairs:
        assert topology.rest_lengths[a] == topology.rest_lengths[b]
        pa, ca = (topology.joint_names[i] for i in topology.bones[a])
        pb, cb = (topology.joint_names[i] for i in topology.bones[b])
        assert ca.startswith("l_") and cb.startswith("r_")
        assert ca[2:] == cb[2:]
    # every left-side bone has a partner
    left_bones = {i for i, (_, c) in enumerate(topology.bones) if topology.joint_names[c].startswith("l_")}
    assert left_bones == set(lefts)


def test_topology_json_roundtrip(topology):
    assert SkeletonTopology.from_json(topology.to_json()) == topology


@pytest.mark.parametrize("bones", [
    ((0, 1), (1, 0)),  # cycle, no root
    ((0, 1), (0, 1)),  # two parents
])
def test_topology_rejects_non_trees(bones):
    with pytest.raises(ValueError):
        SkeletonTopology(("a", "b", "c"), bones, (), (1.0, 1.0))


def test_topology_rejects_bad_lengths_and_pairs():
    with pytest.raises(ValueError):
        SkeletonTopology(("a", "b"), ((0, 1),), (), (0.0,))
    with pytest.raises(ValueError):
        SkeletonTopology(("a", "b", "c"), ((0, 1), (0, 2)), ((0, 0),), (1.0, 1.0))
    with pytest.raises(ValueError):
        SkeletonTopology(("a",), (), (), ())


def test_pose_types_validate():
    with pytest.raises(ValueError):
        Pose3D(np.full((15, 3), np.nan))
    with pytest.raises(ValueError):
        Pose2D(np.zeros((2, 2)), np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        MotionSequence([], 30.0)
    with pytest.raises(ValueError):
        MotionSequence([Pose3D(np.zeros((2, 3)))], 0.0)


@given(seeds)
def test_sampled_pose_keeps_rest_lengths(seed):
    topo = default_topology()
    pose = sample_pose(topo, seed)
    assert np.abs(bone_lengths(pose.joints, topo) - np.array(topo.rest_lengths)).max() < 1e-9
    assert np.all(pose.joints[:, 2] > 0)
    assert 2.0 <= pose.joints[topo.root, 2] <= 4.0


def test_sample_pose_deterministic(topology):
    assert np.array_equal(sample_pose(topology, 5).joints, sample_pose(topology, 5).joints)
    assert not np.array_equal(sample_pose(topology, 5).joints, sample_pose(topology, 6).joints)


def test_bone_length_examples(topology):
    assert bone_length(Pose3D(np.zeros((15, 3))), 0, topology) == 0.0
    joints = np.zeros((2, 3))
    joints[0] = [0, 0, 2]
    joints[1] = [0, 0.3, 2]
    assert bone_length(Pose3D(joints), (0, 1)) == pytest.approx(0.3, abs=1e-15)


@given(seeds, st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_bone_length_rotation_invariant(seed, a, b):
    topo = default_topology()
    pose = sample_pose(topo, seed)
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    R = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]]) @ np.array([[1, 0, 0], [0, cb, -sb], [0, sb, cb]])
    rotated = pose.joints @ R.T + [0.1, -0.2, 0.3]
    assert np.allclose(bone_lengths(rotated, topo), bone_lengths(pose.joints, topo), atol=1e-12)


def test_interpolate_endpoints(topology):
    a, b = sample_pose(topology, 1), sample_pose(topology, 2)
    m = interpolate_motion(a, b, 12, topology=topology)
    assert len(m.frames) == 12
    assert np.abs(m.frames[0].joints - a.joints).max() <= 1e-9
    assert np.abs(m.frames[-1].joints - b.joints).max() <= 1e-9
    two = interpolate_motion(a, b, 2, topology=topology)
    assert np.array_equal(two.frames[0].joints, a.joints) and np.array_equal(two.frames[1].joints, b.joints)
    with pytest.raises(ValueError):
        interpolate_motion(a, b, 1, topology=topology)


@given(seeds, seeds, st.integers(3, 60))
def test_second_differences_within_analytic_bound(s1, s2, n):
    topo = default_topology()
    a, b = sample_pose(topo, s1), sample_pose(topo, s2)
    traj = interpolate_motion(a, b, n, topology=topo).as_array()
    acc = np.linalg.norm(traj[2:] - 2 * traj[1:-1] + traj[:-2], axis=-1)  # (n-2, K)
    bound = second_difference_bound(a, b, n, topo)
    assert np.all(acc <= bound[None, :] * (1 + 1e-9) + 1e-12)


@given(seeds, seeds, st.integers(2, 60))
def test_steps_within_rate_bound(s1, s2, n):
    topo = default_topology()
    a, b = sample_pose(topo, s1), sample_pose(topo, s2)
    traj = interpolate_motion(a, b, n, topology=topo).as_array()
    step = np.linalg.norm(np.diff(traj, axis=0), axis=-1)
    assert np.all(step <= step_bound(a, b, n, topo)[None, :] * (1 + 1e-9) + 1e-12)


def test_interpolation_preserves_bone_lengths(topology):
    a, b = sample_pose(topology, 3), sample_pose(topology, 4)
    traj = interpolate_motion(a, b, 20, topology=topology).as_array()
    lengths = bone_lengths(traj, topology)
    assert np.abs(lengths - lengths[0]).max() < 1e-12
