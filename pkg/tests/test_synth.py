"""Generator contracts: determinism, noiseless identity, the statistical
swap-rate oracle, and export round trips."""

import json
import os

import numpy as np
import pytest

from uncalmocap import io as mio
from uncalmocap import synth
from uncalmocap.exceptions import ConfigInvalid
from uncalmocap.geometry import project_many


def small_cfg(**kw):
    base = dict(seed=3, n_people=2, n_views=3, n_frames=40)
    base.update(kw)
    return synth.SceneConfig(**base)


def test_noiseless_observations_equal_projections():
    gt, streams = synth.generate(small_cfg())
    for rec in streams:
        assert np.array_equal(rec.joints, gt.projections[rec.view_id, rec.track_id, rec.frame])
        assert np.all(rec.confidence == 1.0)


def test_same_seed_bit_identical():
    cfg = small_cfg(jitter_px=2.0, swap_rate=0.2, swap_persistence=10, dropout_rate=0.05)
    gt_a, streams_a = synth.generate(cfg)
    gt_b, streams_b = synth.generate(cfg)
    assert len(streams_a) == len(streams_b)
    for a, b in zip(streams_a, streams_b):
        assert (a.view_id, a.frame, a.track_id) == (b.view_id, b.frame, b.track_id)
        assert np.array_equal(a.joints, b.joints)
        assert np.array_equal(a.confidence, b.confidence)
    assert [(e.kind, e.view, e.frame_start, e.persons) for e in gt_a.events] == [
        (e.kind, e.view, e.frame_start, e.persons) for e in gt_b.events
    ]


def test_swap_fraction_matches_block_model_expectation():
    # block model: each full persistence-window is swapped with prob p, so
    # the corrupted-record fraction over covered frames is Binomial(blocks, p)
    p, persistence, frames, views = 0.05, 20, 200, 5
    total_blocks = 0
    swapped_blocks = 0
    for seed in range(10):
        cfg = synth.SceneConfig(
            seed=seed, n_people=3, n_views=views, n_frames=frames,
            swap_rate=p, swap_persistence=persistence,
        )
        gt, _ = synth.generate(cfg)
        total_blocks += views * (frames // persistence)
        swapped_blocks += sum(1 for e in gt.events if e.kind == "swap")
    frac = swapped_blocks / total_blocks
    sigma = np.sqrt(p * (1 - p) / total_blocks)
    assert abs(frac - p) < 3 * sigma + 1e-12


def test_swap_is_involution():
    cfg = small_cfg()
    gt, _ = synth.generate(cfg)
    obs = gt.projections.copy()
    conf = np.ones(obs.shape[:-1])
    event = synth.NoiseEvent("swap", 1, 5, 14, (0, 1))
    synth.apply_swap(obs, conf, event)
    assert not np.array_equal(obs, gt.projections)
    synth.apply_swap(obs, conf, event)
    assert np.array_equal(obs, gt.projections)


def test_stripping_logged_swaps_recovers_noiseless_streams():
    cfg = small_cfg(swap_rate=0.5, swap_persistence=10)
    gt, streams = synth.generate(cfg)
    assert any(e.kind == "swap" for e in gt.events)
    obs = np.zeros_like(gt.projections)
    for rec in streams:
        obs[rec.view_id, rec.track_id, rec.frame] = rec.joints
    conf = np.ones(obs.shape[:-1])
    for e in gt.events:
        if e.kind == "swap":
            synth.apply_swap(obs, conf, e)
    assert np.array_equal(obs, gt.projections)


def test_ground_truth_cameras_reproject_exactly():
    gt, _ = synth.generate(small_cfg())
    for v, cam in enumerate(gt.cameras):
        px, depth = project_many(gt.joints.reshape(-1, 3), cam)
        assert np.all(depth > 0)
        assert np.allclose(px.reshape(gt.projections[v].shape), gt.projections[v], atol=1e-9)


def test_perturbed_cameras_have_configured_error():
    cfg = small_cfg(cam_perturb_deg=5.0)
    gt, _ = synth.generate(cfg)
    for true, pert in zip(gt.cameras[1:], gt.perturbed_cameras[1:]):
        r_rel = true.extrinsics.matrix() @ pert.extrinsics.matrix().T
        ang = np.degrees(np.arccos(np.clip((np.trace(r_rel) - 1) / 2, -1, 1)))
        assert np.isclose(ang, 5.0, atol=1e-6)
    assert np.array_equal(
        gt.perturbed_cameras[0].extrinsics.rotation, gt.cameras[0].extrinsics.rotation
    )


def test_export_ingest_round_trip(tmp_path):
    cfg = small_cfg(jitter_px=1.0, dropout_rate=0.05)
    gt, streams = synth.generate(cfg)
    synth.export(gt, streams, tmp_path)
    for name in ("poses2d", "cameras_gt", "cameras_perturbed", "bodymodel", "motions_gt", "events"):
        assert os.path.isfile(tmp_path / f"{name}.json")
    back = mio.load_poses2d(tmp_path / "poses2d.json")
    assert len(back) == len(streams)
    key = lambda r: (r.frame, r.track_id, r.view_id)
    for a, b in zip(sorted(streams, key=key), sorted(back, key=key)):
        assert key(a) == key(b)
        assert np.array_equal(a.joints, b.joints)
        assert np.array_equal(a.confidence, b.confidence)
    cams = mio.load_cameras(tmp_path / "cameras_gt.json")
    for a, b in zip(gt.cameras, cams):
        assert np.array_equal(a.extrinsics.rotation, b.extrinsics.rotation)
        assert np.array_equal(a.extrinsics.translation, b.extrinsics.translation)
    motions, fps = mio.load_motions(tmp_path / "motions_gt.json")
    assert fps == cfg.fps
    for a, b in zip(gt.motions, motions):
        assert np.array_equal(a.rot6d, b.rot6d)
        assert np.array_equal(a.glob_trans, b.glob_trans)
    events = mio.load_events(tmp_path / "events.json")
    assert [(e.kind, e.view, e.frame_start, e.frame_end, tuple(e.persons)) for e in events] == [
        (e.kind, e.view, e.frame_start, e.frame_end, tuple(e.persons)) for e in gt.events
    ]


def test_export_writes_stable_bytes(tmp_path):
    cfg = small_cfg(jitter_px=1.5)
    gt, streams = synth.generate(cfg)
    synth.export(gt, streams, tmp_path / "a")
    synth.export(gt, streams, tmp_path / "b")
    for name in os.listdir(tmp_path / "a"):
        with open(tmp_path / "a" / name, "rb") as fa, open(tmp_path / "b" / name, "rb") as fb:
            assert fa.read() == fb.read(), name


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        synth.SceneConfig(seed=1, n_views=1)
    with pytest.raises(ConfigInvalid):
        synth.SceneConfig(seed=1, swap_rate=1.5)
    with pytest.raises(ConfigInvalid):
        synth.SceneConfig(seed=None)
