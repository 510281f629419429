from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import make_tracks, track
from stereotrack import synth
from stereotrack.kinematics import (
    acceleration_series,
    density_map,
    depth_series,
    displacement,
    overlay_geometry,
    path_length,
    spatial_distribution,
    speed_series,
    temporal_pattern,
    write_analysis,
)
from stereotrack.triangulate import Track3DRecord, Track3DSet, parse_tracks3d

FPS = 240.0


def tracks3d(positions: np.ndarray, frames=None) -> Track3DSet:
    """Track3DSet from an ``(n_ids, n_frames, 3)`` array; ids are the first axis index."""
    frames = np.arange(1, positions.shape[1] + 1) if frames is None else np.asarray(frames)
    return Track3DSet(
        [Track3DRecord(int(f), k, k, *map(float, p)) for k, traj in enumerate(positions) for f, p in zip(frames, traj)]
    )


def test_stationary_fish():
    t = make_tracks(track(1, list(range(1, 21)), (300, 200)))
    s = speed_series(t)[1]
    assert np.all(s.values == 0) and len(s) == 19
    assert np.all(acceleration_series(s).values == 0)
    assert path_length(t, 1) == 0 and displacement(t, 1) == 0


def test_unit_step_per_frame_is_fps_units_per_second():
    t = make_tracks(track(1, list(range(1, 101)), (0, 0), velocity=(1.0, 0.0)))
    s = speed_series(t, FPS)[1]
    np.testing.assert_allclose(s.values, 240.0)
    assert s.units == "px/s"
    assert path_length(t, 1) == pytest.approx(99.0)


def test_gap_uses_true_frame_delta():
    t = make_tracks([(1, 1, 0.0, 0.0), (2, 1, 1.0, 0.0), (5, 1, 4.0, 0.0)])
    s = speed_series(t, FPS)[1]
    assert s.frames.tolist() == [2, 5]
    np.testing.assert_allclose(s.values, [240.0, 240.0])


def test_speed_ramp_gives_constant_acceleration():
    frames = np.arange(1, 51)
    x = 0.5 * 0.01 * (frames - 1) ** 2  # step length grows linearly
    t = make_tracks([(int(f), 1, float(v), 0.0) for f, v in zip(frames, x)])
    a = acceleration_series(speed_series(t, FPS)[1], FPS)
    np.testing.assert_allclose(a.values, 0.01 * FPS * FPS, rtol=1e-9)
    assert a.units == "px/s^2"


def test_short_series_are_empty():
    t = make_tracks([(1, 1, 0.0, 0.0), (1, 2, 5.0, 5.0), (2, 2, 6.0, 5.0)])
    s = speed_series(t)
    assert len(s[1]) == 0 and len(s[2]) == 1
    assert len(acceleration_series(s[2])) == 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_helical_trajectory_matches_closed_form(seed):
    truth = synth.generate(synth.SceneConfig(n_fish=3, n_frames=260, model="helical", seed=seed))
    t3d = tracks3d(truth.positions)
    dt = 1.0 / FPS
    for k, prm in enumerate(truth.params):
        s = speed_series(t3d, FPS)[k]
        mid = (s.frames - 1.5) * dt
        np.testing.assert_allclose(s.values, synth.helix_speed(prm, mid), rtol=0.02)
        a = acceleration_series(s, FPS)
        np.testing.assert_allclose(a.values, synth.helix_acceleration(prm, (a.frames - 2.0) * dt), rtol=0.02)
        arc, _ = quad(lambda x: float(synth.helix_speed(prm, np.array(x))), 0.0, 259 * dt)
        assert path_length(t3d, k) == pytest.approx(arc, rel=0.01)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_rigid_motion_invariance_and_path_bound(seed):
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.normal(size=(2, 30, 3)), axis=1)
    R = synth.rotation(rng.normal(size=3), rng.uniform(0, np.pi))
    moved = pos @ R.T + rng.normal(scale=100, size=3)
    a, b = tracks3d(pos), tracks3d(moved)
    sa, sb = speed_series(a), speed_series(b)
    for k in (0, 1):
        np.testing.assert_allclose(sa[k].values, sb[k].values, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(
            acceleration_series(sa[k]).values, acceleration_series(sb[k]).values, rtol=1e-7, atol=1e-6
        )
        assert path_length(a, k) >= displacement(a, k) - 1e-12


def test_density_counts_every_record():
    assert density_map(make_tracks([(1, 1, 5.0, 5.0)]), bins=4).counts.sum() == 1
    truth = synth.generate(synth.SceneConfig(n_fish=4, n_frames=50, seed=3))
    g = density_map(truth.left, bins=10)
    assert g.counts.sum() == len(truth.left)
    assert density_map(make_tracks([])).counts.size == 0


def test_uniform_scatter_density_is_flat():
    rng = np.random.default_rng(7)
    xy = rng.uniform(0, 100, size=(10_000, 2))
    t = make_tracks([(k + 1, 1, x, y) for k, (x, y) in enumerate(xy)])
    c = density_map(t, bins=5, range=[[0, 100], [0, 100]]).counts
    assert c.max() / c.min() < 2


def test_temporal_pattern_sums_to_record_count():
    truth = synth.generate(synth.SceneConfig(n_fish=3, n_frames=40, seed=5, blips=2, blip_length=(5, 10)))
    deg = synth.degrade(truth)
    frames, counts, avg = temporal_pattern(deg.left, window=24)
    assert counts.sum() == len(deg.left)
    assert avg[0] == counts[0]
    assert avg[30] == pytest.approx(counts[7:31].mean())


def test_spatial_distribution():
    t = make_tracks([(1, 1, 0.0, 0.0), (2, 1, 4.0, 2.0)])
    (s,) = spatial_distribution(t)
    assert (s.n, s.centroid, s.minimum, s.maximum) == (2, (2.0, 1.0), (0.0, 0.0), (4.0, 2.0))


def test_depth_of_reference_record():
    text = "frame,left_id,right_id,x,y,z\n1,0,5,475.641,-251.609,2175.999\n1,1,6,358.941,-255.299,2170.809\n"
    d = depth_series(parse_tracks3d(text))
    assert d[0].values.tolist() == [2175.999]
    assert d[1].frames.tolist() == [1]


def test_overlay_geometry_uses_corner_boxes():
    t = make_tracks([(3, 2, 100.0, 50.0, 10.0, 5.0)])
    assert overlay_geometry(t) == {"3": [{"id": 2, "box": [90.0, 45.0, 110.0, 55.0]}]}


def test_write_analysis_outputs(tmp_path):
    truth = synth.generate(synth.SceneConfig(n_fish=2, n_frames=30, seed=1))
    counts = write_analysis(tracks3d(truth.positions), tmp_path, svg=True)
    assert counts["speed.csv"] == 2 * 29
    assert counts["temporal_pattern.csv"] == 30
    assert (tmp_path / "speed.csv").read_text().startswith("id,frame,speed\n")
    assert any(p.suffix == ".svg" for p in tmp_path.iterdir())
