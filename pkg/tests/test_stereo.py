from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_tracks
from stereotrack import synth
from stereotrack.errors import ConvergenceError, DegenerateGeometryError, MotFormatError
from stereotrack.mot_io import StereoRig, dump_calibration, load_calibration
from stereotrack.stereo import (
    ConsensusMatch,
    EpipolarLine,
    FrameMatch,
    FundamentalMatrix,
    consensus,
    distort_points,
    epipolar_line,
    format_consensus,
    format_frame_matches,
    fundamental_from_rig,
    match_frame,
    match_tracks,
    parse_match_table,
    point_line_distance,
    undistort_point,
    undistort_points,
)


def test_rectified_fundamental(rectified_rig):
    F = fundamental_from_rig(rectified_rig).F
    expected = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]]) / np.sqrt(2)
    assert np.allclose(F, expected) or np.allclose(F, -expected)


def test_epipolar_identity_random_rigs():
    rng = np.random.default_rng(0)
    for _ in range(10):
        rig = synth.random_rig(rng)
        F = fundamental_from_rig(rig).F
        X = np.column_stack([rng.uniform(-500, 500, 100), rng.uniform(-300, 300, 100), rng.uniform(1500, 3000, 100)])
        x1 = np.column_stack([synth.project_ideal(rig, X, 1), np.ones(100)])
        x2 = np.column_stack([synth.project_ideal(rig, X, 2), np.ones(100)])
        assert np.max(np.abs(np.einsum("ij,jk,ik->i", x2, F, x1))) < 1e-9


def test_fundamental_same_from_emitted_calibration():
    rig = synth.random_rig(np.random.default_rng(5), distortion=True)
    a = fundamental_from_rig(rig).F
    b = fundamental_from_rig(load_calibration(dump_calibration(rig))).F
    np.testing.assert_array_equal(a, b)


def test_rank_and_epipoles():
    rig = synth.default_rig()
    Fm = fundamental_from_rig(rig)
    s = np.linalg.svd(Fm.F, compute_uv=False)
    assert s[2] < 1e-9 and s[1] > 1e-6
    e1, e2 = Fm.epipoles()
    assert np.abs(Fm.F @ e1).max() < 1e-9
    assert np.abs(Fm.F.T @ e2).max() < 1e-9
    # left epipole is the image of camera 2's center in camera 1
    c2 = rig.K1 @ rig.camera2_center
    np.testing.assert_allclose(e1[:2] / e1[2], c2[:2] / c2[2], rtol=1e-9)


def test_zero_distortion_is_identity():
    K = np.array([[800, 0, 960], [0, 800, 540], [0, 0, 1.0]])
    p = np.array([[10.0, 20.0], [1000.0, 700.0]])
    np.testing.assert_array_equal(undistort_points(p, K, np.zeros(5)), p)


def test_principal_point_fixed_for_radial_distortion():
    K = np.array([[800, 0, 960], [0, 800, 540], [0, 0, 1.0]])
    np.testing.assert_array_equal(undistort_point((960, 540), K, [-0.2, 0.05, 0, 0, 0.01]), [960, 540])


@given(st.floats(0, 1919), st.floats(0, 1079), st.integers(0, 2**31))
@settings(max_examples=200, deadline=None)
def test_distort_inverts_undistort(u, v, seed):
    rng = np.random.default_rng(seed)
    rig = synth.random_rig(rng, distortion=True)
    p = np.array([u, v])
    q = undistort_point(p, rig.K1, rig.dist1)
    assert np.abs(distort_points(q, rig.K1, rig.dist1) - p).max() < 1e-6


def test_undistort_reports_non_convergence():
    K = np.array([[100, 0, 0], [0, 100, 0], [0, 0, 1.0]])
    with pytest.raises(ConvergenceError):
        undistort_points(np.array([[900.0, 900.0]]), K, np.array([-2.0, 0, 0, 0]))


def test_rectified_line_is_horizontal(rectified_rig):
    F = fundamental_from_rig(rectified_rig)
    line = epipolar_line(F, (0.3, 0.7))
    assert (line.a, line.b) == pytest.approx((0.0, 1.0), abs=1e-15)
    assert -line.c / line.b == pytest.approx(0.7)


def _same_line(x: EpipolarLine, y: EpipolarLine) -> bool:
    return np.allclose([x.a, x.b, x.c], [y.a, y.b, y.c], atol=1e-12)


def test_line_scale_invariance():
    F = fundamental_from_rig(synth.default_rig()).F
    for scale in (5.0, -3.0):
        assert _same_line(epipolar_line(F * scale, (400, 300)), epipolar_line(F, (400, 300)))


def test_line_is_unit_normalized_and_true_match_on_it():
    rig = synth.default_rig()
    F = fundamental_from_rig(rig)
    X = np.array([[100.0, -50.0, 2000.0]])
    p1 = synth.project_ideal(rig, X, 1)[0]
    p2 = synth.project_ideal(rig, X, 2)[0]
    line = epipolar_line(F, p1)
    assert line.a**2 + line.b**2 == pytest.approx(1.0, abs=1e-12)
    assert point_line_distance(line, p2) < 1e-9


def test_epipole_gives_degenerate_line():
    Fm = fundamental_from_rig(synth.default_rig())
    e1, _ = Fm.epipoles()
    with pytest.raises(DegenerateGeometryError):
        epipolar_line(Fm, e1[:2] / e1[2])


def test_point_line_distance_examples():
    line = EpipolarLine(0.0, 1.0, -100.0)
    assert point_line_distance(line, (50, 103)) == pytest.approx(3.0)
    assert point_line_distance(line, (-7, 100)) == 0


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_point_line_distance_brute_force(a, b, c, x, y):
    n = np.hypot(a, b)
    if n < 1e-3:
        return
    d = point_line_distance(EpipolarLine(a / n, b / n, c / n), (x, y))
    assert d == pytest.approx(abs(a * x + b * y + c) / np.sqrt(a * a + b * b), rel=1e-9, abs=1e-9)


def test_match_frame_single_pair_and_threshold(rectified_rig):
    F = fundamental_from_rig(rectified_rig)
    (m,) = match_frame({0: (0.0, 0.25)}, {7: (-0.1, 0.25)}, F, rectified_rig, threshold=0.01, frame=3)
    assert (m.frame, m.left_id, m.right_id) == (3, 0, 7) and m.residual < 1e-12
    assert match_frame({0: (0.0, 0.25)}, {7: (-0.1, 0.65)}, F, rectified_rig, threshold=0.2) == []


def _pixel_rectified():
    K = np.array([[1000.0, 0, 960], [0, 1000.0, 540], [0, 0, 1]])
    return StereoRig(K, K, np.zeros(4), np.zeros(4), np.eye(3), np.array([-100.0, 0, 0]))


def test_match_frame_pixel_threshold():
    rig = _pixel_rectified()
    F = fundamental_from_rig(rig)
    assert match_frame({0: (500, 300)}, {1: (450, 340)}, F, rig, threshold=20) == []
    assert len(match_frame({0: (500, 300)}, {1: (450, 315)}, F, rig, threshold=20)) == 1


def test_one_to_one_modes():
    # rectified rig: residual is the vertical offset
    rig = _pixel_rectified()
    F = fundamental_from_rig(rig)
    left = {0: (500, 300), 1: (600, 302)}
    right = {5: (450, 301), 6: (550, 309)}
    none = match_frame(left, right, F, rig, threshold=10, one_to_one="none")
    assert [(m.left_id, m.right_id) for m in none] == [(0, 5), (1, 5)]
    greedy = match_frame(left, right, F, rig, threshold=10, one_to_one="greedy")
    assert [(m.left_id, m.right_id) for m in greedy] == [(0, 5), (1, 6)]


def test_greedy_versus_optimal():
    rig = _pixel_rectified()
    F = fundamental_from_rig(rig)
    left = {0: (500, 299), 1: (600, 300)}
    right = {5: (450, 300), 6: (550, 302)}
    greedy = match_frame(left, right, F, rig, threshold=2.5, one_to_one="greedy")
    optimal = match_frame(left, right, F, rig, threshold=2.5, one_to_one="optimal")
    assert [(m.left_id, m.right_id) for m in greedy] == [(1, 5)]
    assert [(m.left_id, m.right_id) for m in optimal] == [(0, 5), (1, 6)]
    assert [m.residual for m in optimal] == pytest.approx([1.0, 2.0])


@given(st.permutations(list(range(6))))
@settings(max_examples=20, deadline=None)
def test_match_frame_order_invariant(perm):
    rig = synth.default_rig()
    F = fundamental_from_rig(rig)
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.uniform(-400, 400, 6), rng.uniform(-200, 200, 6), rng.uniform(1800, 2800, 6)])
    lp, rp = synth.project(rig, X, 1), synth.project(rig, X, 2)
    base = match_frame({i: tuple(lp[i]) for i in range(6)}, {i: tuple(rp[i]) for i in range(6)}, F, rig)
    shuffled = match_frame({i: tuple(lp[i]) for i in perm}, {i: tuple(rp[i]) for i in reversed(perm)}, F, rig)
    assert base == shuffled


def test_noiseless_synth_frames_match_truth():
    truth = synth.generate(synth.SceneConfig(seed=21, min_separation_px=60))
    rig, threshold = truth.rig, 10.0
    Fm = fundamental_from_rig(rig)
    per_frame = match_tracks(truth.left, truth.right, rig, threshold)
    corr = truth.correspondence
    got = {(m.frame, m.left_id): m for m in per_frame}
    lf, rf = truth.left.by_frame(), truth.right.by_frame()
    checked = 0
    for f in lf:
        lp = {r.id: undistort_point(r.center, rig.K1, rig.dist1) for r in lf[f]}
        rp = {r.id: undistort_point(r.center, rig.K2, rig.dist2) for r in rf[f]}
        lines = {i: epipolar_line(Fm, p) for i, p in lp.items()}
        near = {(i, j) for i in lines for j in rp if point_line_distance(lines[i], rp[j]) <= threshold}
        for i in lp:
            ambiguous = any(j != corr[i] for a, j in near if a == i) or any(
                a != i for a, j in near if j == corr[i])
            m = got.get((f, i))
            if not ambiguous:
                checked += 1
                assert m is not None and m.right_id == corr[i] and m.residual < 1e-6
            elif m is not None and m.right_id != corr[i]:
                assert (i, m.right_id) in near
    assert checked > 0.75 * len(truth.left)
    assert {c.left_id: c.right_id for c in consensus(per_frame)} == corr


def test_consensus_majority_and_ties():
    votes = [FrameMatch(f, 0, 5, 0.0) for f in range(200)] + [FrameMatch(f, 0, 2, 0.0) for f in range(200, 260)]
    votes += [FrameMatch(1, 1, 9, 0.0)]
    votes += [FrameMatch(1, 2, 4, 0.0), FrameMatch(2, 2, 3, 0.0)]
    assert consensus(votes) == [ConsensusMatch(0, 5, 200, 260), ConsensusMatch(1, 9, 1, 1), ConsensusMatch(2, 3, 1, 2)]


def test_consensus_recovers_pairing_despite_transient_collisions():
    # two fish cross the same epipolar line for a few frames; the vote still holds
    rig = _pixel_rectified()
    rows_l, rows_r = [], []
    for f in range(1, 101):
        y_b = 300 + (f - 50) * 0.5 if 45 <= f <= 55 else 300 + (15 if f < 45 else -15)
        rows_l += [(f, 1, 500, 300), (f, 2, 800, y_b)]
        rows_r += [(f, 7, 450, 300), (f, 8, 750, y_b)]
    per_frame = match_tracks(make_tracks(rows_l), make_tracks(rows_r), rig, threshold=10, one_to_one="none")
    assert any(m.left_id == 2 and m.right_id == 7 for m in per_frame)
    assert {c.left_id: c.right_id for c in consensus(per_frame)} == {1: 7, 2: 8}


def test_match_table_round_trip_and_manual_form():
    cons = [ConsensusMatch(0, 5, 200, 260), ConsensusMatch(3, 1, 7, 9)]
    assert parse_match_table(format_consensus(cons)) == cons
    manual = parse_match_table("left_id,right_id\n0,5\n1,6\n")
    assert [(m.left_id, m.right_id) for m in manual] == [(0, 5), (1, 6)]
    with pytest.raises(MotFormatError):
        parse_match_table("left_id,right_id\n0,5\n0,6\n")


def test_frame_match_csv_columns():
    text = format_frame_matches([FrameMatch(1, 0, 5, 0.25)])
    assert text == "frame,left_id,right_id,residual\n1,0,5,0.250000\n"


def test_fundamental_matrix_normalizes():
    Fm = FundamentalMatrix(np.diag([3.0, 4.0, 0.0]))
    assert np.linalg.norm(Fm.F) == pytest.approx(1.0)
