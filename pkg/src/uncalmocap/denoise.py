"""Physics-geometry consistent filtering of multi-view 2D detections.

Per person and frame, each detected view contributes one optical ray per
joint. Two costs are built per view pair: a physical cost (distance of the
rays to the previous frame's triangulated joint) and a geometric cost (the
reciprocal product measuring ray coplanarity). Costs are mapped to
affinities A = exp(-(c_g G / s_g + c_p P / s_p)) and a binary view-subset
indicator s is chosen to maximize the floor-shifted pairwise consistency

    <A - floor, s s^T> = sum_{i != j in s} (A_ij - floor),   |s| >= 2.

The floor shift keeps the objective from growing by absorbing
inconsistent views (their affinities sit below the floor) while clean
views, whose affinities all clear the floor, are always worth adding; on
noise-free input the filter is therefore the identity. Selected views
keep their detections; the joint is re-triangulated from them to drive
the next frame's physical cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .bodymodel import TORSO_JOINTS
from .exceptions import EmptySelection, NoTrajectory, TooFewViews
from .geometry import (
    Camera,
    point_ray_distances,
    rays_from_pixels,
    triangulate_batch,
)
from .validation import as_array

_TIE_TOL = 1e-9


@dataclass
class TrackedPose2D:
    """One person's detections in one view and frame."""

    view_id: int
    frame: int
    track_id: int
    joints: np.ndarray       # (J, 2) pixels
    confidence: np.ndarray   # (J,) in [0, 1]
    selected_views: Optional[list] = None

    def __post_init__(self):
        self.joints = as_array(self.joints, (-1, 2), "joints")
        self.confidence = np.clip(as_array(self.confidence, (-1,), "confidence"), 0.0, 1.0)
        if self.confidence.shape[0] != self.joints.shape[0]:
            raise ValueError("confidence length must match joint count")


@dataclass
class DenoiseConfig:
    geometric_weight: float = 0.7   # c_g
    physical_weight: float = 0.3    # c_p
    physical_scale_mm: float = 40.0
    geometric_scale_mm: float = 20.0
    max_gap: int = 10
    affinity_floor: float = 0.1
    torso_vote_weight: float = 2.0
    exhaustive_max_views: int = 12

    def __post_init__(self):
        if self.geometric_weight < 0 or self.physical_weight < 0:
            raise ValueError("weights must be nonnegative")
        total = self.geometric_weight + self.physical_weight
        if not np.isclose(total, 1.0):
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass
class ConsistencyMatrices:
    physical: Optional[np.ndarray]  # (V, V) mm, None without a trajectory
    geometric: np.ndarray           # (V, V) mm
    valid: np.ndarray               # (V,) view detected this person/frame


@dataclass
class ViewSelection:
    indicator: np.ndarray  # (V,) bool
    objective: float

    @property
    def matrix(self):
        s = self.indicator.astype(float)
        return np.outer(s, s)


@dataclass
class TrajectoryState:
    """Per-joint previous 3D point and its age in frames."""

    points: np.ndarray  # (J, 3)
    age: np.ndarray     # (J,) frames since last successful triangulation

    @staticmethod
    def empty(n_joints):
        return TrajectoryState(np.zeros((n_joints, 3)), np.full(n_joints, np.iinfo(np.int32).max // 2))

    def valid_mask(self, max_gap):
        return self.age <= max_gap


def physical_cost(x_prev, directions, moments, valid_mask=None, max_gap_exceeded=False):
    """Distance of each view's ray to the previous-frame point: (V,) mm.

    Raises NoTrajectory when the previous point is invalid; the caller is
    expected to fall back to geometry-only affinities.
    """
    if max_gap_exceeded or x_prev is None:
        raise NoTrajectory("no valid previous-frame joint")
    x_prev = as_array(x_prev, (3,), "x_prev")
    costs = point_ray_distances(x_prev[None, :], directions, moments)
    if valid_mask is not None:
        costs = np.where(valid_mask, costs, np.inf)
    return costs


def _reciprocal_products(directions, moments):
    g = np.einsum("ik,jk->ij", directions, moments)
    return np.abs(g + g.T)


def build_matrices(directions, moments, valid, x_prev=None, config: DenoiseConfig = DenoiseConfig()):
    """Physical and geometric cost matrices over views for one joint.

    directions/moments: (V, 3) rays (arbitrary rows where valid is False),
    valid: (V,) detection mask, x_prev: previous 3D point or None.
    """
    valid = np.asarray(valid, dtype=bool)
    if int(valid.sum()) < 2:
        raise TooFewViews(f"need >= 2 detected views, got {int(valid.sum())}")
    geometric = _reciprocal_products(directions, moments)
    physical = None
    if x_prev is not None:
        per_view = point_ray_distances(np.asarray(x_prev)[None, :], directions, moments)
        physical = per_view[:, None] + per_view[None, :]
    mask = np.outer(valid, valid)
    geometric = np.where(mask, geometric, 0.0)
    np.fill_diagonal(geometric, 0.0)
    if physical is not None:
        physical = np.where(mask, physical, 0.0)
        np.fill_diagonal(physical, 0.0)
    return ConsistencyMatrices(physical, geometric, valid)


def _affinity(mats: ConsistencyMatrices, config: DenoiseConfig):
    # the weighted cost mix sits inside one exponential so that a view must
    # be consistent both physically and geometrically to score high; without
    # a trajectory the geometric term carries the full weight
    cost = config.geometric_weight * mats.geometric / config.geometric_scale_mm
    if mats.physical is None:
        cost = cost / config.geometric_weight
    else:
        cost = cost + config.physical_weight * mats.physical / config.physical_scale_mm
    a = np.exp(-cost)
    mask = np.outer(mats.valid, mats.valid)
    a = np.where(mask, a, 0.0)
    np.fill_diagonal(a, 0.0)
    return a


def _subset_objective(a, idx, floor):
    k = len(idx)
    sub = a[np.ix_(idx, idx)]
    return float(sub.sum()) - floor * k * (k - 1)


def _exhaustive_select(a, candidates, floor):
    best_idx, best_obj = None, -np.inf
    for k in range(2, len(candidates) + 1):
        for combo in combinations(candidates, k):
            obj = _subset_objective(a, list(combo), floor)
            if obj > best_obj + _TIE_TOL or (
                abs(obj - best_obj) <= _TIE_TOL and best_idx is not None and k > len(best_idx)
            ):
                best_idx, best_obj = list(combo), obj
    return best_idx, best_obj


def _greedy_select(a, candidates, floor):
    cand = list(candidates)
    pair_best, pair_obj = None, -np.inf
    for i, j in combinations(cand, 2):
        if a[i, j] > pair_obj:
            pair_best, pair_obj = [i, j], a[i, j]
    current = list(pair_best)
    current_obj = _subset_objective(a, current, floor)
    improved = True
    while improved:
        improved = False
        # best addition; ties go to the larger subset
        for v in [v for v in cand if v not in current]:
            obj = _subset_objective(a, current + [v], floor)
            if obj >= current_obj - _TIE_TOL:
                current = current + [v]
                current_obj = obj
                improved = True
                break
        if improved:
            continue
        # best swap
        for v_in in list(current):
            if len(current) <= 2:
                break
            for v_out in [v for v in cand if v not in current]:
                trial = [v for v in current if v != v_in] + [v_out]
                obj = _subset_objective(a, trial, floor)
                if obj > current_obj + _TIE_TOL:
                    current, current_obj = trial, obj
                    improved = True
                    break
            if improved:
                break
    return sorted(current), current_obj


def select_views(mats: ConsistencyMatrices, config: DenoiseConfig = DenoiseConfig(), force_greedy: bool = False):
    """Pick the view subset maximizing the floor-shifted pairwise affinity.

    Exact enumeration up to config.exhaustive_max_views valid views, greedy
    (best pair, additions, swaps) beyond. Ties prefer more views. Raises
    EmptySelection when no pair clears the affinity floor.
    """
    a = _affinity(mats, config)
    candidates = np.flatnonzero(mats.valid)
    if len(candidates) < 2:
        raise TooFewViews(f"need >= 2 valid views, got {len(candidates)}")
    if a[np.ix_(candidates, candidates)].max() < config.affinity_floor:
        raise EmptySelection("no view pair clears the affinity floor")
    if force_greedy or len(candidates) > config.exhaustive_max_views:
        idx, obj = _greedy_select(a, candidates, config.affinity_floor)
    else:
        idx, obj = _exhaustive_select(a, candidates, config.affinity_floor)
    indicator = np.zeros(a.shape[0], dtype=bool)
    indicator[idx] = True
    return ViewSelection(indicator, obj)


# ------------------------------
# Sequence filtering
# ------------------------------

def _stream_table(streams):
    """Index records as table[(frame, track_id)][view_id] -> record."""
    table = {}
    frames = set()
    tracks = set()
    views = set()
    for rec in streams:
        table.setdefault((rec.frame, rec.track_id), {})[rec.view_id] = rec
        frames.add(rec.frame)
        tracks.add(rec.track_id)
        views.add(rec.view_id)
    return table, sorted(frames), sorted(tracks), sorted(views)


def _torso_weights(n_joints, joint_names, torso_weight):
    w = np.ones(n_joints)
    if joint_names is not None:
        for name in TORSO_JOINTS:
            if name in joint_names:
                w[joint_names.index(name)] = torso_weight
    return w


@dataclass
class DenoiseResult:
    records: list                       # filtered TrackedPose2D records
    trajectories: dict                  # track_id -> (T, J, 3) with NaN gaps
    selected: dict                      # (frame, track_id) -> list of view ids
    removed: list = field(default_factory=list)  # (frame, track_id, view_id) dropped


def denoise_sequence(streams, cameras, config: DenoiseConfig = DenoiseConfig(), joint_names=None):
    """Filter per-person multi-view detections and maintain 3D trajectories.

    streams: list of TrackedPose2D; cameras: list of Camera (uninitialized
    views are ignored); returns a DenoiseResult. The view set of a person
    and frame is the torso-weighted majority vote over per-joint
    selections; the first valid frame of each person passes through
    unfiltered to bootstrap its trajectory.
    """
    cams = {c.view_id: c for c in cameras if c.initialized}
    table, frames, tracks, _ = _stream_table(streams)
    if not frames:
        return DenoiseResult([], {}, {})
    n_frames = frames[-1] + 1
    n_joints = streams[0].joints.shape[0]
    vote_w = _torso_weights(n_joints, joint_names, config.torso_vote_weight)

    result = DenoiseResult([], {}, {})
    for track in tracks:
        state = TrajectoryState.empty(n_joints)
        traj = np.full((n_frames, n_joints, 3), np.nan)
        booted = False
        for frame in frames:
            recs = table.get((frame, track), {})
            live = sorted(v for v in recs if v in cams)
            if len(live) < 2:
                state.age += 1
                continue
            n_live = len(live)
            dirs = np.zeros((n_joints, n_live, 3))
            moms = np.zeros((n_joints, n_live, 3))
            conf = np.zeros((n_joints, n_live))
            for k, v in enumerate(live):
                d, m = rays_from_pixels(recs[v].joints, cams[v])
                dirs[:, k] = d
                moms[:, k] = m
                conf[:, k] = recs[v].confidence

            if not booted:
                sel_local = np.ones(n_live, dtype=bool)
                chosen = list(live)
            else:
                prev_ok = state.valid_mask(config.max_gap)
                votes = np.zeros(n_live)
                weight_total = 0.0
                for j in range(n_joints):
                    valid_j = conf[j] > 0
                    if int(valid_j.sum()) < 2:
                        continue
                    mats = build_matrices(
                        dirs[j], moms[j], valid_j,
                        state.points[j] if prev_ok[j] else None,
                        config,
                    )
                    try:
                        sel = select_views(mats, config)
                    except EmptySelection:
                        continue
                    votes += vote_w[j] * sel.indicator
                    weight_total += vote_w[j]
                if weight_total == 0.0:
                    state.age += 1
                    continue
                sel_local = votes > 0.5 * weight_total
                if int(sel_local.sum()) < 2:
                    state.age += 1
                    continue
                chosen = [v for k, v in enumerate(live) if sel_local[k]]

            # triangulate each joint from the chosen views
            weights = conf * sel_local[None, :]
            points, ok = triangulate_batch(dirs, moms, weights)
            state.points[ok] = points[ok]
            state.age[ok] = 0
            state.age[~ok] += 1
            traj[frame][ok] = points[ok]
            booted = True

            for v in live:
                if v in chosen:
                    result.records.append(replace(recs[v], selected_views=list(chosen)))
                else:
                    result.removed.append((frame, track, v))
            result.selected[(frame, track)] = list(chosen)
        result.trajectories[track] = traj
    return result


class PhysicsGeometryFilter(BaseEstimator):
    """Estimator wrapper around denoise_sequence.

    Parameters mirror DenoiseConfig; `cameras` is the list of calibrated
    Camera objects the rays are cast from. fit() validates parameters,
    transform() filters a list of TrackedPose2D records.
    """

    def __init__(
        self,
        cameras=None,
        geometric_weight=0.7,
        physical_weight=0.3,
        physical_scale_mm=40.0,
        geometric_scale_mm=20.0,
        max_gap=10,
        affinity_floor=0.1,
        torso_vote_weight=2.0,
        joint_names=None,
    ):
        self.cameras = cameras
        self.geometric_weight = geometric_weight
        self.physical_weight = physical_weight
        self.physical_scale_mm = physical_scale_mm
        self.geometric_scale_mm = geometric_scale_mm
        self.max_gap = max_gap
        self.affinity_floor = affinity_floor
        self.torso_vote_weight = torso_vote_weight
        self.joint_names = joint_names

    def _config(self):
        return DenoiseConfig(
            geometric_weight=self.geometric_weight,
            physical_weight=self.physical_weight,
            physical_scale_mm=self.physical_scale_mm,
            geometric_scale_mm=self.geometric_scale_mm,
            max_gap=self.max_gap,
            affinity_floor=self.affinity_floor,
            torso_vote_weight=self.torso_vote_weight,
        )

    def fit(self, X=None, y=None):
        if not self.cameras:
            raise ValueError("cameras must be provided before fitting")
        self._config()
        return self

    def transform(self, X):
        self.fit()
        result = denoise_sequence(X, self.cameras, self._config(), self.joint_names)
        self.result_ = result
        return result.records
