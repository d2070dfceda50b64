"""Deterministic synthetic multi-person scenes: ground-truth cameras on a
ring, procedural walk motions, and 2D observations corrupted by Gaussian
jitter (high frequency), identity swaps (low frequency) and dropouts.

Swaps follow a block model: each view's timeline is divided into windows
of `swap_persistence` frames and each full window is independently swapped
with probability `swap_rate`, exchanging two people's detections in that
view. The expected fraction of corrupted (view, frame) records therefore
equals swap_rate exactly, which the statistical tests rely on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import io as mio
from .bodymodel import (
    BodyTemplate,
    MotionParams,
    default_template,
    fk_sequence,
    matrix_to_rot6d,
    merge_joint_rotations,
)
from .denoise import TrackedPose2D
from .exceptions import ConfigInvalid
from .geometry import (
    Camera,
    Extrinsics,
    Intrinsics,
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    project_many,
)
from .validation import check_probability_rates


@dataclass
class SceneConfig:
    seed: int
    n_people: int = 3
    n_views: int = 5
    n_frames: int = 200
    fps: float = 30.0
    ring_radius_mm: float = 4000.0
    jitter_px: float = 0.0
    swap_rate: float = 0.0
    swap_persistence: int = 20
    dropout_rate: float = 0.0
    cam_perturb_deg: float = 5.0
    cam_perturb_frac: float = 0.05
    focal_px: float = 1150.0
    image_width: int = 1920
    image_height: int = 1080

    def __post_init__(self):
        if self.seed is None:
            raise ConfigInvalid("seed is mandatory")
        if self.n_views < 2:
            raise ConfigInvalid("need at least two views")
        if self.n_people < 1 or self.n_frames < 1:
            raise ConfigInvalid("need at least one person and one frame")
        if self.swap_persistence < 1:
            raise ConfigInvalid("swap_persistence must be >= 1")
        check_probability_rates(
            swap_rate=self.swap_rate, dropout_rate=self.dropout_rate
        )


@dataclass
class NoiseEvent:
    kind: str        # "swap" | "dropout"
    view: int
    frame_start: int
    frame_end: int   # inclusive
    persons: tuple


@dataclass
class GroundTruth:
    cameras: list                 # ground-truth Camera per view
    perturbed_cameras: list       # the "unknown" starting point variant
    motions: list                 # MotionParams per person
    joints: np.ndarray            # (N, T, 24, 3) world mm
    projections: np.ndarray       # (V, N, T, J, 2) noiseless pixels
    events: list = field(default_factory=list)
    template: BodyTemplate = None
    fps: float = 30.0


def ring_cameras(cfg: SceneConfig, rng):
    target = np.array([0.0, 900.0, 0.0])
    cams = []
    for v in range(cfg.n_views):
        ang = 2.0 * np.pi * v / cfg.n_views
        height = 1200.0 + 700.0 * rng.uniform()
        center = np.array(
            [cfg.ring_radius_mm * np.cos(ang), height, cfg.ring_radius_mm * np.sin(ang)]
        )
        fwd = target - center
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        ext = Extrinsics(matrix_to_axis_angle(rot), -rot @ center)
        k = Intrinsics(cfg.focal_px, cfg.focal_px, cfg.image_width / 2.0, cfg.image_height / 2.0)
        cams.append(Camera(k, ext, view_id=v))
    return cams


def perturb_cameras(cams, cfg: SceneConfig, rng):
    """Rotate every non-reference view by cam_perturb_deg about a random
    axis and scale/shift its translation by cam_perturb_frac."""
    out = [cams[0]]
    for cam in cams[1:]:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        d_rot = axis_angle_to_matrix(axis * np.deg2rad(cfg.cam_perturb_deg))
        rot = d_rot @ cam.extrinsics.matrix()
        base = cam.extrinsics.translation
        trans = base * (1.0 + cfg.cam_perturb_frac * rng.uniform(-1, 1)) + rng.normal(
            scale=cfg.cam_perturb_frac * np.linalg.norm(base) / 3.0, size=3
        )
        out.append(cam.with_extrinsics(Extrinsics(matrix_to_axis_angle(rot), trans)))
    return out


def _axis_rotations(n, axis, angles):
    """(T,) angles about one local axis -> (T, 3, 3)."""
    vec = np.zeros((n, 3))
    vec[:, axis] = angles
    return axis_angle_to_matrix(vec)


def walk_motion(cfg: SceneConfig, template: BodyTemplate, person: int, rng):
    """Procedural walk cycle along a smooth circular path."""
    t = np.arange(cfg.n_frames) / cfg.fps
    stride_hz = rng.uniform(1.2, 1.8)
    phase0 = rng.uniform(0, 2 * np.pi)
    phase = 2 * np.pi * stride_hz * t + phase0

    path_radius = 650.0 + 420.0 * person
    ang0 = 2.0 * np.pi * person / max(cfg.n_people, 1) + rng.uniform(-0.3, 0.3)
    ang_speed = rng.uniform(0.25, 0.45) * rng.choice([-1.0, 1.0])
    sway = 0.08 * np.sin(2 * np.pi * 0.21 * t + rng.uniform(0, 6))
    ang = ang0 + ang_speed * t + sway

    pos = np.stack(
        [
            path_radius * np.cos(ang),
            960.0 + 18.0 * np.sin(2 * phase) + rng.uniform(-25, 25),
            path_radius * np.sin(ang),
        ],
        axis=1,
    )
    # heading follows the path tangent
    heading = np.arctan2(np.gradient(pos[:, 2]), np.gradient(pos[:, 0]))
    glob_rot = np.zeros((cfg.n_frames, 3))
    glob_rot[:, 1] = -heading
    glob_rot[:, 0] = 0.04 * np.sin(phase)

    n = cfg.n_frames
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    locals_ = [eye.copy() for _ in range(23)]  # articulated joints 1..23

    hip_amp = rng.uniform(0.35, 0.5)
    knee_amp = rng.uniform(0.4, 0.6)
    arm_amp = rng.uniform(0.15, 0.3)
    locals_[0] = _axis_rotations(n, 0, hip_amp * np.sin(phase))            # left_hip
    locals_[1] = _axis_rotations(n, 0, hip_amp * np.sin(phase + np.pi))   # right_hip
    locals_[3] = _axis_rotations(n, 0, knee_amp * np.clip(np.sin(phase + np.pi * 0.75), 0, None))
    locals_[4] = _axis_rotations(n, 0, knee_amp * np.clip(np.sin(phase + np.pi * 1.75), 0, None))
    locals_[6] = _axis_rotations(n, 0, 0.12 * np.sin(phase))               # left_ankle
    locals_[7] = _axis_rotations(n, 0, 0.12 * np.sin(phase + np.pi))
    locals_[2] = _axis_rotations(n, 1, 0.06 * np.sin(phase))               # spine1 sway
    locals_[8] = _axis_rotations(n, 1, -0.05 * np.sin(phase))              # spine3
    locals_[11] = _axis_rotations(n, 1, 0.04 * np.sin(phase + 1.0))        # neck

    # arms: hang down from the T-pose, then swing
    hang_l = axis_angle_to_matrix(np.array([0.0, 0.0, -1.25]))
    hang_r = axis_angle_to_matrix(np.array([0.0, 0.0, 1.25]))
    swing_l = _axis_rotations(n, 0, arm_amp * np.sin(phase + np.pi))
    swing_r = _axis_rotations(n, 0, arm_amp * np.sin(phase))
    locals_[15] = swing_l @ hang_l                                         # left_shoulder
    locals_[16] = swing_r @ hang_r                                         # right_shoulder
    locals_[17] = _axis_rotations(n, 2, -0.35 + 0.15 * np.sin(phase))      # left_elbow
    locals_[18] = _axis_rotations(n, 2, 0.35 - 0.15 * np.sin(phase + np.pi))

    blocks = matrix_to_rot6d(np.stack(locals_, axis=1))  # (T, 23, 6)
    beta = np.clip(rng.normal(scale=0.3, size=10), -1.0, 1.0)
    return MotionParams(beta, merge_joint_rotations(blocks), glob_rot, pos)


def _swap_blocks(cfg: SceneConfig, rng):
    """Choose swapped windows per view under the block model."""
    events = []
    n_blocks = cfg.n_frames // cfg.swap_persistence
    for v in range(cfg.n_views):
        for b in range(n_blocks):
            u = rng.uniform()
            if cfg.n_people >= 2 and u < cfg.swap_rate:
                pair = tuple(sorted(rng.choice(cfg.n_people, size=2, replace=False).tolist()))
                f0 = b * cfg.swap_persistence
                events.append(NoiseEvent("swap", v, f0, f0 + cfg.swap_persistence - 1, pair))
    return events


def apply_swap(observations, confidences, event: NoiseEvent):
    """Exchange two people's joints in one view over the event window.

    Involution: applying the same event twice restores the input. Arrays
    are modified in place; observations (V, N, T, J, 2), confidences
    (V, N, T, J).
    """
    i, j = event.persons
    sl = slice(event.frame_start, event.frame_end + 1)
    v = event.view
    obs_i = observations[v, i, sl].copy()
    observations[v, i, sl] = observations[v, j, sl]
    observations[v, j, sl] = obs_i
    conf_i = confidences[v, i, sl].copy()
    confidences[v, i, sl] = confidences[v, j, sl]
    confidences[v, j, sl] = conf_i


def generate(cfg: SceneConfig):
    """Build the scene; returns (GroundTruth, list of TrackedPose2D)."""
    rng = np.random.default_rng(cfg.seed)
    template = default_template()
    cams = ring_cameras(cfg, rng)
    motions = [walk_motion(cfg, template, p, rng) for p in range(cfg.n_people)]
    joints = np.stack([fk_sequence(template, m).joints_world for m in motions])  # (N, T, 24, 3)

    n_joints = joints.shape[2]
    projections = np.zeros((cfg.n_views, cfg.n_people, cfg.n_frames, n_joints, 2))
    for v, cam in enumerate(cams):
        px, _ = project_many(joints.reshape(-1, 3), cam)
        projections[v] = px.reshape(cfg.n_people, cfg.n_frames, n_joints, 2)

    observations = projections.copy()
    if cfg.jitter_px > 0:
        noise = rng.normal(scale=cfg.jitter_px, size=observations.shape)
        observations += noise
        mag = np.linalg.norm(noise, axis=-1)
        confidences = np.clip(np.exp(-mag / cfg.jitter_px), 0.05, 1.0)
    else:
        confidences = np.ones(observations.shape[:-1])

    events = _swap_blocks(cfg, rng)
    for e in events:
        apply_swap(observations, confidences, e)

    dropped = np.zeros((cfg.n_views, cfg.n_people, cfg.n_frames), dtype=bool)
    if cfg.dropout_rate > 0:
        dropped = rng.uniform(size=dropped.shape) < cfg.dropout_rate
        for v, n, t in zip(*np.nonzero(dropped)):
            events.append(NoiseEvent("dropout", int(v), int(t), int(t), (int(n),)))

    streams = []
    for v in range(cfg.n_views):
        for n in range(cfg.n_people):
            for t in range(cfg.n_frames):
                if dropped[v, n, t]:
                    continue
                streams.append(
                    TrackedPose2D(
                        view_id=v,
                        frame=t,
                        track_id=n,
                        joints=observations[v, n, t],
                        confidence=confidences[v, n, t],
                    )
                )
    perturbed = perturb_cameras(cams, cfg, rng)
    gt = GroundTruth(cams, perturbed, motions, joints, projections, events, template, cfg.fps)
    return gt, streams


def corrupted_records(gt: GroundTruth):
    """Set of (view, frame, track) records touched by a swap event."""
    bad = set()
    for e in gt.events:
        if e.kind != "swap":
            continue
        for f in range(e.frame_start, e.frame_end + 1):
            for p in e.persons:
                bad.add((e.view, f, p))
    return bad


def export(gt: GroundTruth, streams, out_dir):
    """Write the interchange files consumed by the other stages."""
    os.makedirs(out_dir, exist_ok=True)
    mio.save_poses2d(streams, os.path.join(out_dir, "poses2d.json"))
    mio.save_cameras(gt.cameras, os.path.join(out_dir, "cameras_gt.json"))
    mio.save_cameras(gt.perturbed_cameras, os.path.join(out_dir, "cameras_perturbed.json"))
    mio.save_template(gt.template, os.path.join(out_dir, "bodymodel.json"))
    mio.save_motions(gt.motions, os.path.join(out_dir, "motions_gt.json"), fps=gt.fps)
    mio.save_events(gt.events, os.path.join(out_dir, "events.json"))
