"""JSON interchange formats shared by all pipeline stages and the CLI.

  cameras.json   [{id, fx, fy, cx, cy, skew, rotation:[3], translation:[3], initialized}]
  poses2d.json   [{view_id, frame, track_id, joints: [[x, y, conf] x J], selected_views?}]
  bodymodel.json {joints: [{name, parent, offset, shape_dirs}], capsules: [...]}
  motions.json   {fps, persons: [{beta, rot6d, glob_rot, glob_trans}]}
  events.json    [{type: swap|dropout, view, frames: [a, b], persons: [...]}]
  result.json    {cameras, people: [{beta, glob_rot, glob_trans, theta}], report}
"""

from __future__ import annotations

import json
import os

import numpy as np

from .bodymodel import BodyTemplate, MotionParams, motion_to_pose_vectors
from .denoise import TrackedPose2D
from .geometry import Camera, Extrinsics, Intrinsics


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))


def _load(path):
    with open(path) as fh:
        return json.load(fh)


# ------------------------------
# cameras
# ------------------------------

def camera_to_dict(cam: Camera):
    k = cam.intrinsics
    return {
        "id": cam.view_id,
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
        "skew": k.skew,
        "rotation": cam.extrinsics.rotation.tolist(),
        "translation": cam.extrinsics.translation.tolist(),
        "initialized": bool(cam.initialized),
    }


def camera_from_dict(d):
    return Camera(
        Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d.get("skew", 0.0)),
        Extrinsics(np.asarray(d["rotation"], float), np.asarray(d["translation"], float)),
        view_id=int(d["id"]),
        initialized=bool(d.get("initialized", True)),
    )


def save_cameras(cams, path):
    _dump([camera_to_dict(c) for c in cams], path)


def load_cameras(path):
    return [camera_from_dict(d) for d in _load(path)]


# ------------------------------
# 2D pose streams
# ------------------------------

def save_poses2d(records, path):
    out = []
    for r in sorted(records, key=lambda r: (r.frame, r.track_id, r.view_id)):
        d = {
            "view_id": r.view_id,
            "frame": r.frame,
            "track_id": r.track_id,
            "joints": np.hstack([r.joints, r.confidence[:, None]]).tolist(),
        }
        if r.selected_views is not None:
            d["selected_views"] = list(r.selected_views)
        out.append(d)
    _dump(out, path)


def load_poses2d(path):
    records = []
    for d in _load(path):
        arr = np.asarray(d["joints"], dtype=float)
        records.append(
            TrackedPose2D(
                view_id=int(d["view_id"]),
                frame=int(d["frame"]),
                track_id=int(d["track_id"]),
                joints=arr[:, :2],
                confidence=arr[:, 2],
                selected_views=d.get("selected_views"),
            )
        )
    return records


# ------------------------------
# body template and motions
# ------------------------------

def save_template(template: BodyTemplate, path):
    _dump(template.to_dict(), path)


def load_template(path):
    return BodyTemplate.from_dict(_load(path))


def save_motions(motions, path, fps=30.0):
    _dump({"fps": fps, "persons": [m.to_dict() for m in motions]}, path)


def load_motions(path):
    d = _load(path)
    return [MotionParams.from_dict(p) for p in d["persons"]], d.get("fps", 30.0)


# ------------------------------
# noise events
# ------------------------------

def save_events(events, path):
    _dump(
        [
            {
                "type": e.kind,
                "view": e.view,
                "frames": [e.frame_start, e.frame_end],
                "persons": list(e.persons),
            }
            for e in events
        ],
        path,
    )


def load_events(path):
    from .synth import NoiseEvent

    return [
        NoiseEvent(d["type"], d["view"], d["frames"][0], d["frames"][1], tuple(d["persons"]))
        for d in _load(path)
    ]


# ------------------------------
# optimizer result
# ------------------------------

def save_result(cameras, motions, report, path):
    people = []
    for m in motions:
        people.append(
            {
                "beta": m.beta.tolist(),
                "glob_rot": m.glob_rot.tolist(),
                "glob_trans": m.glob_trans.tolist(),
                "theta": motion_to_pose_vectors(m.rot6d).tolist(),
                "rot6d": m.rot6d.tolist(),
            }
        )
    _dump(
        {
            "cameras": [camera_to_dict(c) for c in cameras],
            "people": people,
            "report": report,
        },
        path,
    )


def load_result(path):
    d = _load(path)
    cameras = [camera_from_dict(c) for c in d["cameras"]]
    motions = []
    for p in d["people"]:
        motions.append(
            MotionParams(
                np.asarray(p["beta"], float),
                np.asarray(p["rot6d"], float),
                np.asarray(p["glob_rot"], float),
                np.asarray(p["glob_trans"], float),
            )
        )
    return cameras, motions, d["report"]


def require_file(path, what):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path
