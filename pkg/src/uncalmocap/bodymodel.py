"""Simplified parametric articulated body: a 24-joint shape-scaled skeleton
with capsule surfaces.

The skeleton is a tree rooted at the pelvis. Bone offsets are scaled
linearly by a 10-dim shape vector through per-joint shape directions.
A motion row is 23 articulated joints x 6D rotation = 138 values; the
pelvis local rotation is folded into the per-frame global rotation.

Body-frame kinematics place the pelvis at the origin with identity
orientation; the per-frame global rotation/translation map body to world:
x_world = R_glob @ x_body + t_glob.

Note: the shipped template keeps every joint's shape directions parallel
to its offset (pure bone-length scaling). Capsule surface samples rely on
this to stay exactly on the surface for nonzero shape vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .exceptions import DegenerateRotation
from .geometry import axis_angle_to_matrix, matrix_to_axis_angle, rotation_jacobian
from .validation import as_array

NUM_JOINTS = 24
NUM_SHAPE = 10
NUM_ARTICULATED = 23
MOTION_DIM = NUM_ARTICULATED * 6

# joints whose view-selection votes are double-weighted during denoising
TORSO_JOINTS = ("left_hip", "right_hip", "left_shoulder", "right_shoulder", "neck")

_EPS = 1e-12


# ------------------------------
# 6D rotation representation
# ------------------------------

def rot6d_to_matrix(r6):
    """Gram-Schmidt a 6-vector (first two matrix columns) into a rotation.

    Batched: (..., 6) -> (..., 3, 3). Raises DegenerateRotation when the
    two implied columns are parallel within 1e-6 rad.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < _EPS):
        raise DegenerateRotation("first column has zero norm")
    b1 = a1 / n1[..., None]
    proj = np.einsum("...i,...i->...", b1, a2)
    u2 = a2 - proj[..., None] * b1
    n2 = np.linalg.norm(u2, axis=-1)
    na2 = np.linalg.norm(a2, axis=-1)
    sine = n2 / np.maximum(na2, _EPS)
    if np.any(na2 < _EPS) or np.any(sine <= 1e-6):
        raise DegenerateRotation("6D columns are (near-)parallel")
    b2 = u2 / n2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m):
    """First two columns of a rotation matrix, flattened: (..., 3, 3) -> (..., 6)."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rot6d_vjp(r6, d_matrix):
    """Vector-Jacobian product of rot6d_to_matrix, batched.

    d_matrix: upstream gradient w.r.t. the output rotation, (..., 3, 3).
    Returns the gradient w.r.t. the 6-vector, (..., 6).
    """
    r6 = np.asarray(r6, dtype=np.float64)
    d_matrix = np.asarray(d_matrix, dtype=np.float64)
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)[..., None]
    b1 = a1 / n1
    proj = np.einsum("...i,...i->...", b1, a2)[..., None]
    u2 = a2 - proj * b1
    n2 = np.linalg.norm(u2, axis=-1)[..., None]
    b2 = u2 / n2

    g1 = d_matrix[..., :, 0]
    g2 = d_matrix[..., :, 1]
    g3 = d_matrix[..., :, 2]

    # b3 = b1 x b2
    db1 = g1 + np.cross(b2, g3)
    db2 = g2 + np.cross(g3, b1)
    # b2 = u2 / |u2|
    du2 = (db2 - b2 * np.einsum("...i,...i->...", b2, db2)[..., None]) / n2
    # u2 = a2 - (b1 . a2) b1
    da2 = du2 - b1 * np.einsum("...i,...i->...", b1, du2)[..., None]
    db1 = db1 - a2 * np.einsum("...i,...i->...", b1, du2)[..., None] - proj * du2
    # b1 = a1 / |a1|
    da1 = (db1 - b1 * np.einsum("...i,...i->...", b1, db1)[..., None]) / n1
    return np.concatenate([da1, da2], axis=-1)


# ------------------------------
# Template
# ------------------------------

@dataclass(frozen=True)
class Capsule:
    joint_a: int  # proximal joint (parent of joint_b)
    joint_b: int  # distal joint; segment in joint_a's frame is (0, offset_b)
    radius: float


@dataclass
class BodyTemplate:
    names: list
    parents: np.ndarray       # (24,) int, -1 for the pelvis
    offsets: np.ndarray       # (24, 3) mm, joint position relative to parent
    shape_dirs: np.ndarray    # (24, 10, 3) mm per unit shape coefficient
    capsules: list            # list[Capsule]
    name_to_index: dict = field(init=False)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = as_array(self.offsets, (NUM_JOINTS, 3), "offsets")
        self.shape_dirs = as_array(self.shape_dirs, (NUM_JOINTS, NUM_SHAPE, 3), "shape_dirs")
        if len(self.names) != NUM_JOINTS or self.parents.shape != (NUM_JOINTS,):
            raise ValueError("template must define exactly 24 joints")
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, NUM_JOINTS)):
            raise ValueError("joints must be topologically ordered with the pelvis as root")
        for c in self.capsules:
            if self.parents[c.joint_b] != c.joint_a:
                raise ValueError(f"capsule ({c.joint_a},{c.joint_b}) endpoints must be parent/child")
            if not c.radius > 0:
                raise ValueError("capsule radius must be positive")
        self.name_to_index = {n: i for i, n in enumerate(self.names)}

    def offsets_for(self, beta):
        beta = as_array(beta, (NUM_SHAPE,), "beta")
        return self.offsets + np.einsum("jkc,k->jc", self.shape_dirs, beta)

    def rest_joints(self, beta=None):
        off = self.offsets_for(beta) if beta is not None else self.offsets
        out = np.zeros((NUM_JOINTS, 3))
        for j in range(1, NUM_JOINTS):
            out[j] = out[self.parents[j]] + off[j]
        return out

    def bone_lengths(self, beta=None):
        off = self.offsets_for(beta) if beta is not None else self.offsets
        return np.linalg.norm(off[1:], axis=1)

    def limbs(self):
        """(parent, child) joint pairs of every bone, for PCP-style metrics."""
        return [(int(self.parents[j]), j) for j in range(1, NUM_JOINTS)]

    def to_dict(self):
        return {
            "joints": [
                {
                    "name": self.names[j],
                    "parent": int(self.parents[j]),
                    "offset": self.offsets[j].tolist(),
                    "shape_dirs": self.shape_dirs[j].tolist(),
                }
                for j in range(NUM_JOINTS)
            ],
            "capsules": [
                {"joint_a": c.joint_a, "joint_b": c.joint_b, "radius": c.radius}
                for c in self.capsules
            ],
        }

    @staticmethod
    def from_dict(d):
        joints = d["joints"]
        return BodyTemplate(
            names=[j["name"] for j in joints],
            parents=np.array([j["parent"] for j in joints]),
            offsets=np.array([j["offset"] for j in joints]),
            shape_dirs=np.array([j["shape_dirs"] for j in joints]),
            capsules=[Capsule(c["joint_a"], c["joint_b"], float(c["radius"])) for c in d["capsules"]],
        )


def default_template():
    with resources.files("uncalmocap").joinpath("data/bodymodel.json").open("r") as fh:
        return BodyTemplate.from_dict(json.load(fh))


# ------------------------------
# Motion parameter containers
# ------------------------------

@dataclass
class MotionParams:
    """Shape + per-frame articulated rotations + global trajectory."""

    beta: np.ndarray        # (10,)
    rot6d: np.ndarray       # (T, 138)
    glob_rot: np.ndarray    # (T, 3) axis-angle
    glob_trans: np.ndarray  # (T, 3) mm

    def __post_init__(self):
        self.beta = as_array(self.beta, (NUM_SHAPE,), "beta")
        self.rot6d = as_array(self.rot6d, (-1, MOTION_DIM), "rot6d")
        t = self.rot6d.shape[0]
        self.glob_rot = as_array(self.glob_rot, (t, 3), "glob_rot")
        self.glob_trans = as_array(self.glob_trans, (t, 3), "glob_trans")

    @property
    def n_frames(self):
        return self.rot6d.shape[0]

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "rot6d": self.rot6d.tolist(),
            "glob_rot": self.glob_rot.tolist(),
            "glob_trans": self.glob_trans.tolist(),
        }

    @staticmethod
    def from_dict(d):
        return MotionParams(
            np.array(d["beta"]), np.array(d["rot6d"]), np.array(d["glob_rot"]), np.array(d["glob_trans"])
        )


def split_joint_rotations(motion):
    """Unpack motion rows into per-joint 6D blocks: (T, 138) -> (T, 23, 6)."""
    motion = as_array(motion, (-1, MOTION_DIM), "motion")
    return motion.reshape(motion.shape[0], NUM_ARTICULATED, 6)


def merge_joint_rotations(blocks):
    """Inverse of split_joint_rotations; bit-identical round trip."""
    blocks = as_array(blocks, (-1, NUM_ARTICULATED, 6), "blocks")
    return blocks.reshape(blocks.shape[0], MOTION_DIM)


def motion_to_pose_vectors(motion):
    """Decode motion rows to 72-dim axis-angle pose vectors (pelvis block zero)."""
    blocks = split_joint_rotations(motion)
    mats = rot6d_to_matrix(blocks)
    aa = matrix_to_axis_angle(mats)  # (T, 23, 3)
    t = aa.shape[0]
    theta = np.zeros((t, NUM_JOINTS * 3))
    theta[:, 3:] = aa.reshape(t, -1)
    return theta


def pose_vectors_to_motion(theta):
    """Encode 72-dim axis-angle pose vectors (pelvis block ignored) as motion rows."""
    theta = as_array(theta, (-1, NUM_JOINTS * 3), "theta")
    aa = theta[:, 3:].reshape(-1, NUM_ARTICULATED, 3)
    mats = axis_angle_to_matrix(aa)
    return merge_joint_rotations(matrix_to_rot6d(mats))


# ------------------------------
# Forward kinematics (batched over frames) and its reverse pass
# ------------------------------

@dataclass
class FkCache:
    joints_world: np.ndarray  # (T, 24, 3)
    p_body: np.ndarray        # (T, 24, 3)
    g_body: np.ndarray        # (T, 24, 3, 3)
    local: np.ndarray         # (T, 24, 3, 3), identity at the pelvis
    offsets: np.ndarray       # (24, 3) shape-scaled
    rot6d: np.ndarray         # (T, 23, 6) raw inputs
    glob_mat: np.ndarray      # (T, 3, 3)
    glob_rot: np.ndarray      # (T, 3)
    glob_trans: np.ndarray    # (T, 3)

    _glob_jac: np.ndarray = None

    @property
    def glob_jac(self):
        if self._glob_jac is None:
            self._glob_jac = rotation_jacobian(self.glob_rot)
        return self._glob_jac

    @property
    def n_frames(self):
        return self.joints_world.shape[0]


def fk_sequence(template: BodyTemplate, params: MotionParams) -> FkCache:
    blocks = split_joint_rotations(params.rot6d)
    t = blocks.shape[0]
    local = np.broadcast_to(np.eye(3), (t, NUM_JOINTS, 3, 3)).copy()
    local[:, 1:] = rot6d_to_matrix(blocks)
    offsets = template.offsets_for(params.beta)

    g_body = np.empty((t, NUM_JOINTS, 3, 3))
    p_body = np.empty((t, NUM_JOINTS, 3))
    g_body[:, 0] = np.eye(3)
    p_body[:, 0] = 0.0
    for j in range(1, NUM_JOINTS):
        a = template.parents[j]
        g_body[:, j] = g_body[:, a] @ local[:, j]
        p_body[:, j] = p_body[:, a] + np.einsum("tij,j->ti", g_body[:, a], offsets[j])

    glob_mat = axis_angle_to_matrix(params.glob_rot)
    joints_world = np.einsum("tij,tnj->tni", glob_mat, p_body) + params.glob_trans[:, None, :]
    return FkCache(
        joints_world, p_body, g_body, local, offsets, blocks, glob_mat,
        params.glob_rot.copy(), params.glob_trans.copy(),
    )


def forward_kinematics(template: BodyTemplate, params: MotionParams, frame: int):
    """World joint positions (24, 3) of one frame."""
    single = MotionParams(
        params.beta,
        params.rot6d[frame : frame + 1],
        params.glob_rot[frame : frame + 1],
        params.glob_trans[frame : frame + 1],
    )
    return fk_sequence(template, single).joints_world[0]


def world_grad_to_body(cache: FkCache, body_points, d_world):
    """Route gradients of world-frame points rigidly attached to the body
    through x_world = R_glob @ x_body + t_glob.

    body_points, d_world: (T, M, 3). Returns (d_glob_rot (T,3),
    d_glob_trans (T,3), d_body (T, M, 3)).
    """
    d_glob_trans = d_world.sum(axis=1)
    # d/dr_i of R(r) @ x, contracted with the upstream gradient
    rotated = np.einsum("tiab,tmb->tmia", cache.glob_jac, body_points)
    d_glob_rot = np.einsum("tma,tmia->ti", d_world, rotated)
    d_body = np.einsum("tma,tab->tmb", d_world, cache.glob_mat)
    return d_glob_rot, d_glob_trans, d_body


def fk_backward(template: BodyTemplate, cache: FkCache, d_world=None, d_pbody=None, d_gbody=None):
    """Reverse pass through the kinematic tree.

    d_world: (T, 24, 3) gradients w.r.t. world joint positions.
    d_pbody / d_gbody: extra gradients w.r.t. body-frame joint positions /
    orientations (used by capsule surface attachments).
    Returns dict with keys beta, rot6d (T,138), glob_rot, glob_trans.
    """
    t = cache.n_frames
    p_bar = np.zeros((t, NUM_JOINTS, 3))
    g_bar = np.zeros((t, NUM_JOINTS, 3, 3))
    d_glob_rot = np.zeros((t, 3))
    d_glob_trans = np.zeros((t, 3))

    if d_world is not None:
        dr, dt, db = world_grad_to_body(cache, cache.p_body, d_world)
        d_glob_rot += dr
        d_glob_trans += dt
        p_bar += db
    if d_pbody is not None:
        p_bar += d_pbody
    if d_gbody is not None:
        g_bar += d_gbody

    d_beta = np.zeros(NUM_SHAPE)
    d_blocks = np.zeros((t, NUM_ARTICULATED, 6))
    for j in range(NUM_JOINTS - 1, 0, -1):
        a = template.parents[j]
        pj = p_bar[:, j]
        p_bar[:, a] += pj
        g_bar[:, a] += pj[:, :, None] * cache.offsets[j][None, None, :]
        g_bar[:, a] += g_bar[:, j] @ np.swapaxes(cache.local[:, j], 1, 2)
        # offset chain: p_j = p_a + G_a @ o_j
        d_off = np.einsum("tij,ti->j", cache.g_body[:, a], pj)
        d_beta += template.shape_dirs[j] @ d_off
        # local rotation chain: G_j = G_a @ L_j
        l_bar = np.einsum("tki,tkj->tij", cache.g_body[:, a], g_bar[:, j])
        d_blocks[:, j - 1] = rot6d_vjp(cache.rot6d[:, j - 1], l_bar)

    return {
        "beta": d_beta,
        "rot6d": d_blocks.reshape(t, MOTION_DIM),
        "glob_rot": d_glob_rot,
        "glob_trans": d_glob_trans,
    }


# ------------------------------
# Capsule SDF and surface samples
# ------------------------------

def segment_distances(points, seg_a, seg_b):
    """Distance from points to segments with broadcasting.

    points (..., 3) against segments (..., 3)/(..., 3); shapes must
    broadcast. Returns (distance, t_param) where the closest point is
    a + t * (b - a), t clamped to [0, 1].
    """
    points = np.asarray(points, dtype=np.float64)
    seg_a = np.asarray(seg_a, dtype=np.float64)
    seg_b = np.asarray(seg_b, dtype=np.float64)
    ab = seg_b - seg_a
    denom = np.maximum(np.einsum("...i,...i->...", ab, ab), _EPS)
    tpar = np.clip(np.einsum("...i,...i->...", points - seg_a, ab) / denom, 0.0, 1.0)
    closest = seg_a + tpar[..., None] * ab
    return np.linalg.norm(points - closest, axis=-1), tpar


def capsule_sdf_points(points, joints, capsules):
    """Signed distance of points (..., 3) to the capsule union at a posed
    skeleton (joints (24, 3)); negative inside."""
    points = np.asarray(points, dtype=np.float64)
    best = None
    for c in capsules:
        d, _ = segment_distances(points, joints[c.joint_a], joints[c.joint_b])
        sdf = d - c.radius
        best = sdf if best is None else np.minimum(best, sdf)
    return best


def capsule_sdf(point, template: BodyTemplate, params: MotionParams, frame: int):
    """Signed distance (mm) from a world point to the body surface at `frame`."""
    joints = forward_kinematics(template, params, frame)
    out = capsule_sdf_points(np.asarray(point, dtype=np.float64), joints, template.capsules)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SurfaceSamples:
    """Deterministic samples on the capsule surfaces, expressed in the
    proximal joint's frame as radial + axial_u * offset(child)."""

    joint_a: np.ndarray   # (S,) proximal joint index
    child_b: np.ndarray   # (S,) distal joint index
    axial_u: np.ndarray   # (S,) position along the bone in [0, 1]
    radial: np.ndarray    # (S, 3) fixed local-frame offset

    @property
    def count(self):
        return self.joint_a.shape[0]

    def local_points(self, offsets):
        return self.radial + self.axial_u[:, None] * offsets[self.child_b]

    def world_points(self, cache: FkCache):
        loc = self.local_points(cache.offsets)  # (S, 3)
        rotated = np.einsum("tsij,sj->tsi", cache.g_body[:, self.joint_a], loc)
        body = cache.p_body[:, self.joint_a] + rotated
        return np.einsum("tij,tsj->tsi", cache.glob_mat, body) + cache.glob_trans[:, None, :]


def _fibonacci_hemisphere(n, axis):
    """n quasi-uniform unit vectors with nonnegative dot against axis."""
    if n <= 0:
        return np.zeros((0, 3))
    i = np.arange(n) + 0.5
    z = i / n  # (0, 1): hemisphere
    phi = i * (np.pi * (3.0 - np.sqrt(5.0)))
    rad = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)
    basis = _orthonormal_basis(axis)
    return pts @ basis.T


def _orthonormal_basis(axis):
    """Columns (e1, e2, axis_hat)."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / max(np.linalg.norm(a), _EPS)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= max(np.linalg.norm(e1), _EPS)
    e2 = np.cross(a, e1)
    return np.stack([e1, e2, a], axis=1)


def build_surface_samples(template: BodyTemplate, beta, density: float) -> SurfaceSamples:
    """Quasi-uniform capsule-surface samples; `density` is samples per
    square meter of surface, count proportional to each capsule's area."""
    if not density > 0:
        raise ValueError("density must be positive")
    offsets = template.offsets_for(beta)
    rest_dirs = template.offsets  # radial frames anchored to the rest axis
    ja, jb, us, radials = [], [], [], []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for c in template.capsules:
        axis = rest_dirs[c.joint_b]
        length = np.linalg.norm(offsets[c.joint_b])
        r = c.radius
        area_cyl = 2.0 * np.pi * r * length
        area_caps = 4.0 * np.pi * r * r
        total = area_cyl + area_caps
        count = max(2, int(round(density * total / 1e6)))
        n_cyl = int(round(count * area_cyl / total))
        n_cap = max(1, (count - n_cyl) // 2)

        basis = _orthonormal_basis(axis)
        for s in range(n_cyl):
            u = (s + 0.5) / n_cyl
            phi = s * golden
            radial = r * (np.cos(phi) * basis[:, 0] + np.sin(phi) * basis[:, 1])
            ja.append(c.joint_a)
            jb.append(c.joint_b)
            us.append(u)
            radials.append(radial)
        for sign, u_end in ((1.0, 1.0), (-1.0, 0.0)):
            for d in _fibonacci_hemisphere(n_cap, sign * np.asarray(axis, float)):
                ja.append(c.joint_a)
                jb.append(c.joint_b)
                us.append(u_end)
                radials.append(r * d)
    return SurfaceSamples(
        np.asarray(ja, dtype=int),
        np.asarray(jb, dtype=int),
        np.asarray(us, dtype=np.float64),
        np.asarray(radials, dtype=np.float64),
    )


def surface_samples(template: BodyTemplate, params: MotionParams, frame: int, density: float):
    """World-space capsule-surface samples (S, 3) for one frame."""
    samples = build_surface_samples(template, params.beta, density)
    single = MotionParams(
        params.beta,
        params.rot6d[frame : frame + 1],
        params.glob_rot[frame : frame + 1],
        params.glob_trans[frame : frame + 1],
    )
    cache = fk_sequence(template, single)
    return samples.world_points(cache)[0]
