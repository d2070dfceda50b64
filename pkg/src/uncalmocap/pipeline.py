"""Stage orchestration shared by the CLI and the acceptance suite:
camera bootstrapping from pose streams, coarse metric scaling, and the
denoise -> warm start hand-off."""

from __future__ import annotations

import logging

import numpy as np

from .bodymodel import NUM_JOINTS, BodyTemplate
from .denoise import DenoiseConfig, denoise_sequence
from .exceptions import DegenerateConfiguration, InsufficientCorrespondences
from .geometry import (
    Camera,
    Extrinsics,
    RansacConfig,
    init_all_cameras,
    pixel_to_ray,
    relative_to,
    resect_view,
    triangulate,
)

log = logging.getLogger("uncalmocap")


def first_frame_matrix(streams, n_views, n_joints=NUM_JOINTS, frame=None):
    """Stack the earliest frame's joints of every track into the per-view
    correspondence matrix init_all_cameras expects; NaN marks missing."""
    frames = [r.frame for r in streams]
    if not frames:
        raise InsufficientCorrespondences("no records")
    f0 = min(frames) if frame is None else frame
    tracks = sorted({r.track_id for r in streams if r.frame == f0})
    track_pos = {t: i for i, t in enumerate(tracks)}
    out = np.full((n_views, len(tracks) * n_joints, 2), np.nan)
    for r in streams:
        if r.frame != f0 or r.view_id >= n_views:
            continue
        base = track_pos[r.track_id] * n_joints
        ok = r.confidence > 0
        out[r.view_id, base : base + n_joints][ok] = r.joints[ok]
    return out, f0


def estimate_metric_scale(cameras, streams, template: BodyTemplate, frame=None, min_bones=4):
    """Ratio by which camera translations must be multiplied so that
    triangulated first-frame skeletons match the template's bone lengths.

    Resolves the epipolar gauge to an approximately metric scene (the joint
    optimizer refines the residual scale). Returns 1.0 when nothing can be
    triangulated.
    """
    cams = {c.view_id: c for c in cameras if c.initialized}
    if len(cams) < 2:
        return 1.0
    frames = sorted({r.frame for r in streams})
    f0 = frames[0] if frame is None else frame
    by_track = {}
    for r in streams:
        if r.frame == f0 and r.view_id in cams:
            by_track.setdefault(r.track_id, []).append(r)
    ref_lengths = template.bone_lengths()
    ratios = []
    for recs in by_track.values():
        if len(recs) < 2:
            continue
        n_joints = recs[0].joints.shape[0]
        pts = np.full((n_joints, 3), np.nan)
        for j in range(n_joints):
            rays = [
                pixel_to_ray(r.joints[j], cams[r.view_id])
                for r in recs
                if r.confidence[j] > 0
            ]
            if len(rays) < 2:
                continue
            try:
                pts[j] = triangulate(rays)
            except DegenerateConfiguration:
                continue
        for b, (a, c) in enumerate(
            (int(template.parents[j]), j) for j in range(1, min(n_joints, NUM_JOINTS))
        ):
            if np.all(np.isfinite(pts[a])) and np.all(np.isfinite(pts[c])):
                est = np.linalg.norm(pts[c] - pts[a])
                if est > 1e-9:
                    ratios.append(ref_lengths[b] / est)
    if len(ratios) < min_bones:
        return 1.0
    return float(np.median(ratios))


def rescale_cameras(cameras, scale):
    out = []
    for c in cameras:
        out.append(c.with_extrinsics(Extrinsics(c.extrinsics.rotation, c.extrinsics.translation * scale)))
    return out


def _init_attempt(pixels, intrinsics, ransac, pivot):
    """Run init_all_cameras with `pivot` as the reference view, then
    re-gauge every pose so view 0 is the world frame when possible.

    When view 0 itself fails against the pivot (its first frame may be the
    corrupted one), the poses stay in the pivot's frame; the view-0 gauge
    is restored after resection recovers it (see denoise_streams)."""
    n_views = len(intrinsics)
    order = [pivot] + [v for v in range(n_views) if v != pivot]
    res = init_all_cameras(pixels[order], [intrinsics[v] for v in order], ransac)
    exts = [None] * n_views
    initialized = np.zeros(n_views, dtype=bool)
    for i, v in enumerate(order):
        exts[v] = res.extrinsics[i]
        initialized[v] = res.initialized[i]
    if pivot != 0 and initialized[0]:
        ref = exts[0]
        exts = [
            relative_to(e, ref) if initialized[v] else Extrinsics.identity()
            for v, e in enumerate(exts)
        ]
    return exts, initialized, res.notes


def bootstrap_cameras(streams, intrinsics, template: BodyTemplate, ransac: RansacConfig = RansacConfig()):
    """Epipolar initialization against view 0 plus coarse metric scaling.

    If too few views reach consensus against view 0 (a corrupted reference
    first frame starves every pair), other views are tried as the pairwise
    pivot and the result is re-gauged onto view 0. Views that still fail
    stay flagged off and are recovered later by resection against denoised
    trajectories (see resect_uninitialized).
    """
    n_views = len(intrinsics)
    pixels, _ = first_frame_matrix(streams, n_views)
    best = None
    for pivot in range(n_views):
        attempt = _init_attempt(pixels, intrinsics, ransac, pivot)
        if attempt is None:
            continue
        if best is None or attempt[1].sum() > best[1].sum():
            best = attempt
        if best[1].all():
            break
        if pivot == 0 and best[1].sum() >= max(2, n_views - 1):
            break
    if best is None or best[1].sum() < 2:
        raise InsufficientCorrespondences("no pivot view reached epipolar consensus")
    exts, initialized, notes = best
    cams = [
        Camera(intrinsics[v], exts[v], view_id=v, initialized=bool(initialized[v]))
        for v in range(n_views)
    ]
    for v, note in notes.items():
        log.info("pairwise initialization note for view %d: %s", v, note)
    scale = estimate_metric_scale(cams, streams, template)
    log.info("metric scale from bone lengths: %.4f", scale)
    return rescale_cameras(cams, scale)


def resect_uninitialized(cameras, streams, trajectories):
    """Recover views that failed epipolar initialization by absolute-pose
    resection against the denoised 3D trajectories."""
    out = list(cameras)
    for v, cam in enumerate(cameras):
        if cam.initialized:
            continue
        pts, pix = [], []
        for rec in streams:
            if rec.view_id != v or rec.track_id not in trajectories:
                continue
            traj = trajectories[rec.track_id]
            if rec.frame >= traj.shape[0]:
                continue
            ok = np.all(np.isfinite(traj[rec.frame]), axis=1) & (rec.confidence > 0)
            pts.append(traj[rec.frame][ok])
            pix.append(rec.joints[ok])
        if not pts:
            continue
        pts = np.concatenate(pts)
        pix = np.concatenate(pix)
        if pts.shape[0] < 6:
            continue
        # subsample for the DLT; it only needs a well-spread set
        step = max(1, pts.shape[0] // 500)
        try:
            ext = resect_view(pts[::step], pix[::step], cam.intrinsics)
        except (InsufficientCorrespondences, DegenerateConfiguration) as exc:
            log.warning("resection of view %d failed: %s", v, exc)
            continue
        out[v] = Camera(cam.intrinsics, ext, view_id=v, initialized=True)
        log.info("view %d recovered by resection from %d points", v, pts.shape[0])
    return out


def denoise_streams(streams, cameras, config: DenoiseConfig = DenoiseConfig(), joint_names=None):
    """Run the physics-geometry filter, then resect any uninitialized views
    against the resulting trajectories and filter once more so every view
    contributes to the final output. Restores the view-0 world gauge when
    the reference view itself had to be recovered by resection."""
    result = denoise_sequence(streams, cameras, config, joint_names)
    if not all(c.initialized for c in cameras):
        needed_ref = not cameras[0].initialized
        cameras = resect_uninitialized(cameras, streams, result.trajectories)
        if needed_ref and cameras[0].initialized:
            ref = cameras[0].extrinsics
            cameras = [
                c.with_extrinsics(relative_to(c.extrinsics, ref)) if c.initialized else c
                for c in cameras
            ]
        if any(c.initialized for c in cameras):
            result = denoise_sequence(streams, cameras, config, joint_names)
    return result, cameras
