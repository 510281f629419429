from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereotrack import synth
from stereotrack.errors import ConfigError
from stereotrack.mot_io import load_calibration, parse_clean, read_tracks
from stereotrack.stereo import FrameMatch, fundamental_from_rig, undistort_points


def test_same_seed_gives_identical_files(tmp_path):
    cfg = synth.SceneConfig(n_fish=4, n_frames=60, seed=9, noise_px=0.5, blips=1,
                            fragmentation=[synth.Fragment(1, "left", 30, 3)])
    outputs = []
    for run in ("a", "b"):
        truth = synth.generate(cfg)
        paths = synth.write_scene(truth, synth.degrade(truth), tmp_path / run)
        outputs.append({k: p.read_bytes() for k, p in paths.items()})
    assert outputs[0] == outputs[1]
    other = synth.generate(synth.SceneConfig(n_fish=4, n_frames=60, seed=10))
    assert not np.array_equal(other.positions, synth.generate(cfg).positions)


def test_rng_algorithm_is_recorded(tmp_path):
    truth = synth.generate(synth.SceneConfig(n_fish=1, n_frames=20))
    doc = json.loads(synth.write_scene(truth, None, tmp_path)["truth"].read_text())
    assert doc["config"]["rng"] == synth.RNG_ALGORITHM


@pytest.mark.parametrize("model", synth.MODELS)
def test_noiseless_centers_satisfy_epipolar_constraint(model):
    truth = synth.generate(synth.SceneConfig(n_fish=1, n_frames=50, model=model, seed=4))
    rig = truth.rig
    F = fundamental_from_rig(rig).F
    x1 = np.column_stack([undistort_points(truth.left_px[0], rig.K1, rig.dist1), np.ones(50)])
    x2 = np.column_stack([undistort_points(truth.right_px[0], rig.K2, rig.dist2), np.ones(50)])
    assert np.max(np.abs(np.einsum("ij,jk,ik->i", x2, F, x1))) < 1e-9


def test_projections_follow_the_rig_with_distortion():
    rig = synth.random_rig(np.random.default_rng(3), distortion=True)
    truth = synth.generate(synth.SceneConfig(n_fish=2, n_frames=20, seed=1, rig=rig))
    assert np.any(rig.dist1 != 0)
    np.testing.assert_allclose(truth.left_px, synth.project(rig, truth.positions, 1))
    np.testing.assert_allclose(truth.right_px, synth.project(rig, truth.positions, 2))
    assert np.all(synth.depth(rig, truth.positions, 1) > 0)


def test_short_video_shape():
    truth = synth.generate(synth.SceneConfig())
    assert truth.positions.shape == (9, 260, 3)
    assert len(truth.left) == len(truth.right) == 9 * 260
    assert sorted(truth.left_ids) == sorted(truth.right_ids) == list(range(1, 10))


def test_boxes_shrink_with_depth():
    truth = synth.generate(synth.SceneConfig(n_fish=1, n_frames=200, seed=2))
    z = synth.depth(truth.rig, truth.positions[0], 1)
    x_off = np.array([r.x_off for r in sorted(truth.left.records)])
    np.testing.assert_allclose(x_off * z, x_off[0] * z[0], rtol=1e-12)


def test_scene_files_parse(tmp_path):
    truth = synth.generate(synth.SceneConfig(n_fish=3, n_frames=20, seed=5))
    paths = synth.write_scene(truth, synth.degrade(truth), tmp_path)
    assert load_calibration(paths["calibration"].read_text()).K1.tolist() == truth.rig.K1.tolist()
    assert parse_clean(paths["gt_left"].read_text()).records == truth.left.records
    assert len(read_tracks(paths["tracks_right"])) == len(truth.right)


def test_zero_corruption_is_identity():
    truth = synth.generate(synth.SceneConfig(n_fish=3, n_frames=40, seed=6))
    deg = synth.degrade(truth)
    assert deg.left.records == truth.left.records and deg.right.records == truth.right.records
    assert deg.log.id_to_fish["left"] == {tid: k for k, tid in enumerate(truth.left_ids)}


def test_fragmentation_splits_into_adjacent_spans():
    cfg = synth.SceneConfig(n_fish=2, n_frames=200, seed=7, fragmentation=[synth.Fragment(0, "left", 120)])
    truth = synth.generate(cfg)
    deg = synth.degrade(truth)
    old = truth.left_ids[0]
    (frag,) = deg.log.fragments
    spans = {tid: (min(fr), max(fr)) for tid, fr in
             ((tid, [r.frame for r in deg.left.records if r.id == tid]) for tid in (old, frag["new_id"]))}
    assert spans == {old: (1, 119), frag["new_id"]: (120, 200)}
    assert deg.log.id_to_fish["left"][frag["new_id"]] == 0


@given(st.integers(0, 500), st.integers(0, 3), st.integers(0, 3), st.floats(0.0, 2.0))
@settings(max_examples=20, deadline=None)
def test_degraded_count_identity(seed, n_drop, n_blips, noise):
    n_frames = 80
    rng = np.random.default_rng(seed)
    drops = []
    for _ in range(n_drop):
        a = int(rng.integers(1, n_frames))
        drops.append(synth.Dropout(int(rng.integers(0, 3)), str(rng.choice(["left", "right"])), a,
                                   int(rng.integers(a, n_frames + 1))))
    cfg = synth.SceneConfig(n_fish=3, n_frames=n_frames, seed=seed, dropout=drops, blips=n_blips,
                            blip_length=(5, 20), noise_px=noise, blip_clearance_px=50,
                            fragmentation=[synth.Fragment(2, "left", 40, 5)])
    truth = synth.generate(cfg)
    deg = synth.degrade(truth)
    for view, base in (("left", truth.left), ("right", truth.right)):
        blip_records = sum(b["end"] - b["start"] + 1 for b in deg.log.blips if b["view"] == view)
        assert len(getattr(deg, view)) == len(base) - len(deg.log.dropped[view]) + blip_records
        blip_ids = {b["id"] for b in deg.log.blips if b["view"] == view}
        assert {k for k, v in deg.log.id_to_fish[view].items() if v is None} == blip_ids


def test_corrupt_matches_changes_exactly_the_requested_fraction():
    matches = [FrameMatch(f, 1, 2, 0.0) for f in range(1, 101)]
    out = synth.corrupt_matches(matches, 0.2, [1, 2, 3], np.random.default_rng(0))
    assert sum(m.right_id != 2 for m in out) == 20
    assert [m.frame for m in out] == [m.frame for m in matches]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"model": "spiral"},
        {"n_frames": 0},
        {"n_fish": -1},
        {"fragmentation": [synth.Fragment(5, "left", 10)]},
        {"fragmentation": [synth.Fragment(0, "left", 1)]},
        {"dropout": [synth.Dropout(0, "middle", 1, 2)]},
        {"dropout": [synth.Dropout(0, "left", 5, 4)]},
        {"blip_length": (0, 5)},
    ],
)
def test_invalid_config_rejected(kwargs):
    base = {"n_fish": 2, "n_frames": 20}
    with pytest.raises(ConfigError):
        synth.SceneConfig(**{**base, **kwargs})


def test_unplaceable_fish_raises():
    cfg = synth.SceneConfig(n_fish=1, n_frames=20, depth_range=(1.0, 2.0), max_attempts=20)
    with pytest.raises(ConfigError):
        synth.generate(cfg)
