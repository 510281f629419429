from __future__ import annotations

import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_tracks, track
from stereotrack import synth
from stereotrack.reid import (
    ReidConfig,
    compact_ids,
    find_candidates,
    prune_short,
    proximity_distance,
    reid_pass,
    reidentify,
)


def frames(a, b):
    return list(range(a, b + 1))


def test_find_candidates_uses_span():
    t = make_tracks(track(1, frames(1, 260), (0, 0)) + track(2, frames(1, 100), (50, 50)), frame_count=260)
    assert find_candidates(t) == {2}


def test_find_candidates_full_span_with_hole_is_not_candidate():
    fr = [f for f in frames(1, 260) if f != 50]
    t = make_tracks(track(1, fr, (0, 0)), frame_count=260)
    assert find_candidates(t) == set()


def test_proximity_distance():
    assert proximity_distance((0, 0), (3, 4)) == 5
    assert proximity_distance((7.5, -2), (7.5, -2)) == 0


@given(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)))
def test_proximity_distance_matches_formula(a, b):
    assert proximity_distance(a, b) == pytest.approx(math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2), rel=1e-12)


def test_canonical_gap_bridge():
    rows = track(1, frames(1, 120), (500, 500)) + track(2, frames(130, 260), (510, 505))
    out, merges = reid_pass(make_tracks(rows, frame_count=260))
    assert out.ids() == [1]
    (m,) = merges
    assert (m.old_id, m.new_id, m.merge_frame) == (1, 2, 130)
    assert m.distance == pytest.approx(math.hypot(10, 5))


def test_far_start_is_not_merged():
    rows = track(1, frames(1, 120), (500, 500)) + track(2, frames(130, 260), (700, 500))
    out, merges = reid_pass(make_tracks(rows, frame_count=260))
    assert merges == [] and out.ids() == [1, 2]


def test_radius_and_window_boundaries():
    base = track(1, frames(1, 120), (500, 500))
    t = make_tracks(base + track(2, frames(150, 260), (550, 500)), frame_count=260)
    assert len(reid_pass(t)[1]) == 1
    t = make_tracks(base + track(2, frames(150, 260), (550.001, 500)), frame_count=260)
    assert reid_pass(t)[1] == []
    t = make_tracks(base + track(2, frames(220, 260), (510, 500)), frame_count=260)
    assert len(reid_pass(t)[1]) == 1
    t = make_tracks(base + track(2, frames(221, 260), (510, 500)), frame_count=260)
    assert reid_pass(t)[1] == []


def test_overlap_within_limit_drops_new_records():
    rows = track(1, frames(1, 120), (500, 500)) + track(2, frames(111, 260), (505, 500))
    t = make_tracks(rows, frame_count=260)
    out, merges = reid_pass(t)
    assert merges[0].dropped_overlap == 10
    assert out.ids() == [1]
    assert [r.frame for r in out.records] == frames(1, 260)
    # old id's records survive in the overlap
    assert all(r.cx == 500 for r in out.records if r.frame <= 120)


def test_overlap_beyond_limit_is_not_merged():
    rows = track(1, frames(1, 120), (500, 500)) + track(2, frames(110, 260), (505, 500))
    assert reid_pass(make_tracks(rows, frame_count=260))[1] == []


def test_tie_break_distance_then_start_then_id():
    old = track(1, frames(1, 100), (500, 500))
    a = track(5, frames(110, 260), (520, 500))
    b = track(3, frames(105, 260), (520, 500))
    c = track(4, frames(105, 260), (500, 520))
    t = make_tracks(old + a + b + c, frame_count=260)
    _, merges = reid_pass(t)
    assert merges[0].new_id == 3
    t = make_tracks(old + a + track(3, frames(105, 260), (530, 500)), frame_count=260)
    assert reid_pass(t)[1][0].new_id == 5


def test_chain_of_fragments_resolves_to_one_id():
    rows = (
        track(7, frames(1, 80), (100, 100), (1, 0))
        + track(9, frames(90, 150), (190, 100), (1, 0))
        + track(4, frames(160, 260), (260, 100), (1, 0))
    )
    out, merges = reid_pass(make_tracks(rows, frame_count=260))
    assert out.ids() == [7] and len(merges) == 2


def test_pass_twice_equals_once():
    truth = synth.generate(synth.SceneConfig(seed=11, min_separation_px=60))
    cfg = synth.SceneConfig(seed=11, min_separation_px=60, fragmentation=[
        synth.Fragment(0, "left", 90, 4), synth.Fragment(3, "left", 150, 0), synth.Fragment(3, "left", 200, 20)])
    left = synth.degrade(truth, cfg).left
    once, _ = reid_pass(left)
    twice, extra = reid_pass(once)
    assert extra == [] and twice.records == once.records


def test_prune_boundary():
    rows = track(1, frames(1, 29), (0, 0)) + track(2, frames(1, 30), (100, 100))
    out, pruned = prune_short(make_tracks(rows))
    assert pruned == [1] and out.ids() == [2]


def test_compact_ids_first_appearance():
    rows = [(1, 204, 0, 0), (1, 17, 5, 5), (2, 3, 1, 1), (2, 204, 0, 0)]
    out, remap = compact_ids(make_tracks(rows))
    assert remap == {17: 0, 204: 1, 3: 2}
    assert sorted(r.id for r in out.records) == [0, 1, 1, 2]


def test_compact_ids_identity_and_one_based():
    t = make_tracks([(1, 0, 0, 0), (1, 1, 5, 5), (2, 2, 1, 1)])
    assert compact_ids(t)[1] == {0: 0, 1: 1, 2: 2}
    assert compact_ids(t, start=1)[1] == {0: 1, 1: 2, 2: 3}


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 500)), min_size=1, max_size=60, unique=True))
@settings(max_examples=50)
def test_compact_preserves_records_except_id(keys):
    t = make_tracks([(f, i, f * 2.0, i * 3.0) for f, i in keys])
    out, remap = compact_ids(t)
    strip = lambda ts: Counter((r.frame, r.cx, r.cy, r.x_off, r.y_off) for r in ts.records)
    assert strip(out) == strip(t)
    assert sorted(remap.values()) == list(range(len(remap)))


def test_config_validation():
    with pytest.raises(ValueError):
        ReidConfig(window=10, overlap_limit=10)
    with pytest.raises(ValueError):
        ReidConfig(radius=0)


@given(st.integers(0, 40), st.integers(2, 6), st.integers(0, 2))
@settings(max_examples=25, deadline=None)
def test_reidentify_invariants(seed, n_fish, n_frag):
    cfg = synth.SceneConfig(n_fish=n_fish, n_frames=200, seed=seed, blips=1, min_separation_px=60,
                            fragmentation=[synth.Fragment(k % n_fish, "left", 60 + 40 * k, k) for k in range(n_frag)])
    deg = synth.degrade(synth.generate(cfg))
    before = deg.left
    out, report = reidentify(before)
    assert report.ids_after <= report.ids_before == len(before.ids())
    assert report.ids_after == report.ids_before - len(report.merges) - len(report.pruned_ids)
    assert sorted(report.id_remap.values()) == list(range(report.ids_after))
    # only ids change: every output record is an input record relabeled
    src = {(r.frame, r.cx, r.cy) for r in before.records}
    assert all((r.frame, r.cx, r.cy) in src for r in out.records)
