"""Body model oracles: naive per-chain FK, dense-sampling SDF reference,
finite differences for the kinematic reverse pass."""

import numpy as np
import pytest

from uncalmocap import bodymodel as bm
from uncalmocap.exceptions import DegenerateRotation
from uncalmocap.geometry import axis_angle_to_matrix


@pytest.fixture(scope="module")
def template():
    return bm.default_template()


def random_motion(rng, n_frames, scale=0.4):
    aa = rng.normal(scale=scale, size=(n_frames, bm.NUM_ARTICULATED, 3))
    return bm.merge_joint_rotations(bm.matrix_to_rot6d(axis_angle_to_matrix(aa)))


def random_params(rng, n_frames, beta_scale=0.5, motion_scale=0.4):
    return bm.MotionParams(
        rng.normal(scale=beta_scale, size=10).clip(-2, 2),
        random_motion(rng, n_frames, motion_scale),
        rng.normal(scale=0.5, size=(n_frames, 3)),
        rng.normal(scale=500, size=(n_frames, 3)),
    )


# ------------------------------
# 6D rotations
# ------------------------------

def test_canonical_6d_is_identity():
    assert np.allclose(bm.rot6d_to_matrix(np.array([1.0, 0, 0, 0, 1, 0])), np.eye(3))


def test_6d_round_trip_many_rotations():
    rng = np.random.default_rng(0)
    aa = rng.normal(size=(1000, 3))
    aa *= (rng.uniform(0, np.pi * 0.98, size=(1000, 1)) / np.linalg.norm(aa, axis=1, keepdims=True))
    mats = axis_angle_to_matrix(aa)
    back = bm.rot6d_to_matrix(bm.matrix_to_rot6d(mats))
    assert np.max(np.abs(back - mats)) < 1e-12


def test_6d_scale_invariance():
    assert np.allclose(bm.rot6d_to_matrix(np.array([2.0, 0, 0, 0, 3, 0])), np.eye(3))


def test_6d_degenerate_columns_rejected():
    with pytest.raises(DegenerateRotation):
        bm.rot6d_to_matrix(np.array([1.0, 0, 0, 1.0, 1e-9, 0]))


def test_rot6d_vjp_matches_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(20):
        r6 = bm.matrix_to_rot6d(axis_angle_to_matrix(rng.normal(size=3))) + rng.normal(scale=0.1, size=6)
        upstream = rng.normal(size=(3, 3))
        grad = bm.rot6d_vjp(r6, upstream)
        fd = np.zeros(6)
        for i in range(6):
            d = np.zeros(6)
            d[i] = h
            fd[i] = np.sum(
                (bm.rot6d_to_matrix(r6 + d) - bm.rot6d_to_matrix(r6 - d)) / (2 * h) * upstream
            )
        assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7)


# ------------------------------
# forward kinematics
# ------------------------------

def test_rest_pose_reproduces_template(template):
    params = bm.MotionParams(
        np.zeros(10),
        bm.merge_joint_rotations(np.tile(np.array([1.0, 0, 0, 0, 1, 0]), (1, 23, 1))),
        np.zeros((1, 3)),
        np.zeros((1, 3)),
    )
    joints = bm.forward_kinematics(template, params, 0)
    assert np.allclose(joints, template.rest_joints(), atol=1e-12)


def test_global_translation_shifts_all_joints(template):
    rng = np.random.default_rng(2)
    params = random_params(rng, 1)
    base = bm.forward_kinematics(template, params, 0)
    shifted_params = bm.MotionParams(
        params.beta, params.rot6d, params.glob_rot, params.glob_trans + np.array([100.0, 0, 0])
    )
    shifted = bm.forward_kinematics(template, shifted_params, 0)
    assert np.allclose(shifted, base + np.array([100.0, 0, 0]), atol=1e-12)


def naive_chain_fk(template, params, frame):
    """Oracle: per-joint matrix products accumulated along each chain."""
    blocks = bm.split_joint_rotations(params.rot6d[frame : frame + 1])[0]
    offsets = template.offsets_for(params.beta)
    rg = axis_angle_to_matrix(params.glob_rot[frame])
    joints = np.zeros((24, 3))
    for j in range(24):
        # walk up the chain collecting (rotation, offset) pairs
        chain = []
        k = j
        while k != -1:
            chain.append(k)
            k = template.parents[k]
        chain.reverse()
        pos = np.zeros(3)
        rot = np.eye(3)
        for k in chain:
            if k == 0:
                continue
            pos = pos + rot @ offsets[k]
            rot = rot @ bm.rot6d_to_matrix(blocks[k - 1])
        joints[j] = rg @ pos + params.glob_trans[frame]
    return joints


def test_fk_matches_naive_chain_oracle(template):
    rng = np.random.default_rng(3)
    params = random_params(rng, 4)
    for frame in range(4):
        assert np.allclose(
            bm.forward_kinematics(template, params, frame),
            naive_chain_fk(template, params, frame),
            atol=1e-9,
        )


def test_fk_equivariant_under_global_motion(template):
    rng = np.random.default_rng(4)
    params = random_params(rng, 2)
    zeroed = bm.MotionParams(params.beta, params.rot6d, np.zeros((2, 3)), np.zeros((2, 3)))
    base = bm.fk_sequence(template, zeroed).joints_world
    posed = bm.fk_sequence(template, params).joints_world
    for t in range(2):
        rg = axis_angle_to_matrix(params.glob_rot[t])
        assert np.allclose(posed[t], base[t] @ rg.T + params.glob_trans[t], atol=1e-9)


def test_bone_lengths_depend_only_on_shape(template):
    rng = np.random.default_rng(5)
    beta = rng.normal(scale=0.8, size=10)
    lengths = []
    for _ in range(3):
        params = bm.MotionParams(
            beta, random_motion(rng, 1), np.zeros((1, 3)), np.zeros((1, 3))
        )
        joints = bm.forward_kinematics(template, params, 0)
        lengths.append(
            [np.linalg.norm(joints[j] - joints[template.parents[j]]) for j in range(1, 24)]
        )
    assert np.allclose(lengths[0], lengths[1], rtol=1e-9)
    assert np.allclose(lengths[0], lengths[2], rtol=1e-9)
    assert np.allclose(lengths[0], template.bone_lengths(beta), rtol=1e-9)


# ------------------------------
# packing
# ------------------------------

def test_pack_unpack_bit_identical():
    rng = np.random.default_rng(6)
    motion = rng.normal(size=(7, 138))
    blocks = bm.split_joint_rotations(motion)
    back = bm.merge_joint_rotations(blocks)
    assert np.array_equal(back, motion)


def test_zero_motion_has_identity_blocks():
    theta = np.zeros((3, 72))
    motion = bm.pose_vectors_to_motion(theta)
    blocks = bm.split_joint_rotations(motion)
    assert np.allclose(blocks, np.tile(np.array([1.0, 0, 0, 0, 1, 0]), (3, 23, 1)))


def test_pose_vector_round_trip_preserves_fk(template):
    rng = np.random.default_rng(7)
    params = random_params(rng, 3)
    theta = bm.motion_to_pose_vectors(params.rot6d)
    motion2 = bm.pose_vectors_to_motion(theta)
    params2 = bm.MotionParams(params.beta, motion2, params.glob_rot, params.glob_trans)
    assert np.allclose(
        bm.fk_sequence(template, params).joints_world,
        bm.fk_sequence(template, params2).joints_world,
        atol=1e-8,
    )


# ------------------------------
# fk reverse pass
# ------------------------------

def test_fk_backward_matches_finite_differences(template):
    rng = np.random.default_rng(8)
    params = random_params(rng, 3)
    upstream = rng.normal(size=(3, 24, 3))

    cache = bm.fk_sequence(template, params)
    grads = bm.fk_backward(template, cache, d_world=upstream)

    def value(p):
        return float(np.sum(bm.fk_sequence(template, p).joints_world * upstream))

    h = 1e-6
    for name, arr in (("beta", params.beta), ("glob_rot", params.glob_rot), ("glob_trans", params.glob_trans)):
        flat = arr.ravel()
        idxs = rng.choice(flat.size, size=min(8, flat.size), replace=False)
        for i in idxs:
            step = h * max(1.0, abs(flat[i]))
            plus, minus = flat.copy(), flat.copy()
            plus[i] += step
            minus[i] -= step
            pp = bm.MotionParams(
                plus.reshape(arr.shape) if name == "beta" else params.beta,
                params.rot6d,
                plus.reshape(arr.shape) if name == "glob_rot" else params.glob_rot,
                plus.reshape(arr.shape) if name == "glob_trans" else params.glob_trans,
            )
            pm = bm.MotionParams(
                minus.reshape(arr.shape) if name == "beta" else params.beta,
                params.rot6d,
                minus.reshape(arr.shape) if name == "glob_rot" else params.glob_rot,
                minus.reshape(arr.shape) if name == "glob_trans" else params.glob_trans,
            )
            fd = (value(pp) - value(pm)) / (2 * step)
            an = grads[name].ravel()[i]
            assert np.isclose(an, fd, rtol=1e-4, atol=1e-5), f"{name}[{i}]: {an} vs {fd}"

    flat = params.rot6d.ravel()
    idxs = rng.choice(flat.size, size=24, replace=False)
    for i in idxs:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fd = (
            value(bm.MotionParams(params.beta, plus.reshape(params.rot6d.shape), params.glob_rot, params.glob_trans))
            - value(bm.MotionParams(params.beta, minus.reshape(params.rot6d.shape), params.glob_rot, params.glob_trans))
        ) / (2 * h)
        an = grads["rot6d"].ravel()[i]
        assert np.isclose(an, fd, rtol=1e-4, atol=1e-6), f"rot6d[{i}]: {an} vs {fd}"


# ------------------------------
# capsules
# ------------------------------

def rest_params(n_frames=1, beta=None):
    return bm.MotionParams(
        np.zeros(10) if beta is None else beta,
        bm.merge_joint_rotations(np.tile(np.array([1.0, 0, 0, 0, 1, 0]), (n_frames, 23, 1))),
        np.zeros((n_frames, 3)),
        np.zeros((n_frames, 3)),
    )


def test_sdf_on_axis_is_minus_radius(template):
    params = rest_params()
    joints = template.rest_joints()
    cap = template.capsules[5]  # left thigh
    mid = 0.5 * (joints[cap.joint_a] + joints[cap.joint_b])
    assert np.isclose(bm.capsule_sdf(mid, template, params, 0), -cap.radius, atol=1e-9)


def test_sdf_zero_on_surface(template):
    params = rest_params()
    joints = template.rest_joints()
    cap = template.capsules[5]
    mid = 0.5 * (joints[cap.joint_a] + joints[cap.joint_b])
    axis = joints[cap.joint_b] - joints[cap.joint_a]
    perp = np.cross(axis, [0.0, 0.0, 1.0])
    perp /= np.linalg.norm(perp)
    surface_pt = mid + cap.radius * perp
    sdf = bm.capsule_sdf(surface_pt, template, params, 0)
    # zero relative to this capsule; another capsule may be closer, so accept <= 0
    assert sdf <= 1e-9
    # a far-away lateral point is strictly outside everything
    fingertip = joints[23] + np.array([0.0, -500.0, 0.0])
    assert bm.capsule_sdf(fingertip, template, params, 0) > 0


def dense_reference_sdf(template, joints, queries, n_axis=4000):
    """Independent SDF oracle: brute-force enumeration over a dense axial
    grid per segment instead of the closed-form clamped projection."""
    best = np.full(len(queries), np.inf)
    ts = np.linspace(0.0, 1.0, n_axis)
    for c in template.capsules:
        a, b = joints[c.joint_a], joints[c.joint_b]
        centers = a[None] + ts[:, None] * (b - a)[None]
        d = np.linalg.norm(queries[:, None, :] - centers[None], axis=2).min(axis=1)
        best = np.minimum(best, d - c.radius)
    return best


def test_sdf_matches_dense_reference(template):
    rng = np.random.default_rng(9)
    params = rest_params()
    joints = template.rest_joints()
    lo, hi = joints.min(0) - 150, joints.max(0) + 150
    queries = rng.uniform(lo, hi, size=(200, 3))
    ref = dense_reference_sdf(template, joints, queries)
    got = bm.capsule_sdf(queries, template, params, 0)
    assert np.max(np.abs(got - ref)) < 2.0


def test_sdf_is_lipschitz(template):
    rng = np.random.default_rng(10)
    params = rest_params()
    pts = rng.uniform(-800, 800, size=(80, 3))
    vals = bm.capsule_sdf(pts, template, params, 0)
    for _ in range(200):
        i, j = rng.choice(80, size=2, replace=False)
        lhs = abs(vals[i] - vals[j])
        rhs = np.linalg.norm(pts[i] - pts[j])
        assert lhs <= rhs + 1e-9


def test_surface_samples_lie_on_surface(template):
    params = rest_params()
    pts = bm.surface_samples(template, params, 0, density=400.0)
    sdf = bm.capsule_sdf(pts, template, params, 0)
    # on their own capsule the samples are exactly on the surface; the union
    # min can only pull the value negative where capsules overlap
    assert sdf.max() < 1e-6


def test_surface_sample_count_scales_with_density(template):
    beta = np.zeros(10)
    lo = bm.build_surface_samples(template, beta, density=150.0)
    hi = bm.build_surface_samples(template, beta, density=300.0)
    n_caps = len(template.capsules)
    assert abs(hi.count - 2 * lo.count) <= 3 * n_caps


def test_surface_samples_translate_rigidly(template):
    rng = np.random.default_rng(11)
    params = random_params(rng, 1)
    shifted = bm.MotionParams(
        params.beta, params.rot6d, params.glob_rot, params.glob_trans + np.array([0.0, 250.0, 0])
    )
    a = bm.surface_samples(template, params, 0, density=120.0)
    b = bm.surface_samples(template, shifted, 0, density=120.0)
    assert np.allclose(b - a, np.array([0.0, 250.0, 0.0]), atol=1e-9)
