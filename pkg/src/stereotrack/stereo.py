"""Cross-view id association through epipolar geometry.

The fundamental matrix is derived from the calibration. In each frame a left
detection is paired with the right detection closest to its epipolar line,
within a pixel threshold. The most frequent partner over the whole video
becomes the consensus match.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConvergenceError, DegenerateGeometryError
from .mot_io import StereoRig, TrackSet

ONE_TO_ONE_MODES = ("none", "greedy", "optimal")


@dataclass(frozen=True)
class FundamentalMatrix:
    F: np.ndarray

    def __post_init__(self) -> None:
        F = np.asarray(self.F, dtype=float).reshape(3, 3)
        norm = np.linalg.norm(F)
        if norm == 0:
            raise DegenerateGeometryError("fundamental matrix is zero")
        object.__setattr__(self, "F", F / norm)

    def epipoles(self) -> tuple[np.ndarray, np.ndarray]:
        """Right null vectors of F and F^T (left and right epipoles), unit norm."""
        return _null_vector(self.F), _null_vector(self.F.T)


@dataclass(frozen=True)
class EpipolarLine:
    a: float
    b: float
    c: float

    def distance(self, p: Sequence[float]) -> float:
        return point_line_distance(self, p)


@dataclass(frozen=True, order=True)
class FrameMatch:
    frame: int
    left_id: int
    right_id: int
    residual: float


@dataclass(frozen=True, order=True)
class ConsensusMatch:
    left_id: int
    right_id: int
    support: int
    total: int


def _null_vector(M: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(M)
    return vt[-1]


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_rig(rig: StereoRig) -> FundamentalMatrix:
    """F = K2^-T [t]x R K1^-1, scaled to unit Frobenius norm."""
    K1_inv = np.linalg.inv(rig.K1)
    K2_inv = np.linalg.inv(rig.K2)
    E = skew(rig.t) @ rig.R
    return FundamentalMatrix(K2_inv.T @ E @ K1_inv)


def _radial_tangential(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    k1, k2, p1, p2 = dist[:4]
    k3 = dist[4] if dist.size > 4 else 0.0
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _to_normalized(p: np.ndarray, K: np.ndarray) -> np.ndarray:
    y = (p[..., 1] - K[1, 2]) / K[1, 1]
    x = (p[..., 0] - K[0, 2] - K[0, 1] * y) / K[0, 0]
    return np.stack([x, y], axis=-1)


def _to_pixels(xy: np.ndarray, K: np.ndarray) -> np.ndarray:
    u = K[0, 0] * xy[..., 0] + K[0, 1] * xy[..., 1] + K[0, 2]
    v = K[1, 1] * xy[..., 1] + K[1, 2]
    return np.stack([u, v], axis=-1)


def distort_points(points, K: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Forward Brown-Conrady model: ideal pixel coordinates to distorted ones."""
    p = np.asarray(points, dtype=float)
    return _to_pixels(_radial_tangential(_to_normalized(p, K), np.asarray(dist, dtype=float)), K)


def undistort_points(points, K: np.ndarray, dist: np.ndarray, max_iter: int = 50, tol: float = 1e-14) -> np.ndarray:
    """Invert :func:`distort_points` by fixed-point iteration in normalized coordinates.

    Raises ConvergenceError if some point is still off by more than ``tol``
    (normalized units) after ``max_iter`` steps.
    """
    p = np.asarray(points, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if not np.any(dist):
        return p.copy()
    shape = p.shape
    target = _to_normalized(p.reshape(-1, 2), K)
    k1, k2, p1, p2 = dist[:4]
    k3 = dist[4] if dist.size > 4 else 0.0
    x = target.copy()
    for _ in range(max_iter + 1):
        if np.all(np.abs(_radial_tangential(x, dist) - target) <= tol):
            return _to_pixels(x, K).reshape(shape)
        xx, yy = x[:, 0], x[:, 1]
        r2 = xx * xx + yy * yy
        radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2 * p1 * xx * yy + p2 * (r2 + 2 * xx * xx)
        dy = p1 * (r2 + 2 * yy * yy) + 2 * p2 * xx * yy
        x = np.column_stack([(target[:, 0] - dx) / radial, (target[:, 1] - dy) / radial])
    raise ConvergenceError(f"undistortion did not converge in {max_iter} iterations")


def undistort_point(p: Sequence[float], K: np.ndarray, dist: np.ndarray) -> np.ndarray:
    return undistort_points(np.asarray(p, dtype=float), K, dist)


def distort_point(p: Sequence[float], K: np.ndarray, dist: np.ndarray) -> np.ndarray:
    return distort_points(np.asarray(p, dtype=float), K, dist)


def epipolar_line(F: FundamentalMatrix | np.ndarray, p_left: Sequence[float]) -> EpipolarLine:
    """Line ``F @ (u, v, 1)`` in the right image, scaled so ``a^2 + b^2 = 1``.

    Sign is fixed so that ``b > 0`` (or ``a > 0`` for vertical lines).
    """
    M = F.F if isinstance(F, FundamentalMatrix) else np.asarray(F, dtype=float)
    line = M @ np.array([p_left[0], p_left[1], 1.0])
    n = float(np.hypot(line[0], line[1]))
    if n <= 1e-12 * max(1.0, abs(float(p_left[0])), abs(float(p_left[1]))):
        raise DegenerateGeometryError(f"point {tuple(p_left)} is the epipole; its epipolar line is undefined")
    line = line / n
    if line[1] < 0 or (line[1] == 0 and line[0] < 0):
        line = -line
    return EpipolarLine(float(line[0]), float(line[1]), float(line[2]))


def point_line_distance(line: EpipolarLine, p: Sequence[float]) -> float:
    return abs(line.a * p[0] + line.b * p[1] + line.c)


def _line_distances(F: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Distance of every right point to every left point's epipolar line; NaN for degenerate lines."""
    hl = np.column_stack([left, np.ones(len(left))])
    lines = hl @ F.T
    norm = np.hypot(lines[:, 0], lines[:, 1])
    bad = norm <= 1e-12 * np.maximum(1.0, np.abs(left).max(axis=1))
    norm[bad] = 1.0
    lines = lines / norm[:, None]
    hr = np.column_stack([right, np.ones(len(right))])
    D = np.abs(lines @ hr.T)
    D[bad, :] = np.nan
    return D


Detections = Mapping[int, Sequence[float]]


def match_frame(
    left: Detections,
    right: Detections,
    F: FundamentalMatrix,
    rig: StereoRig,
    threshold: float = 10.0,
    one_to_one: str = "greedy",
    frame: int = 0,
) -> list[FrameMatch]:
    """Match left detections to right detections of one frame.

    ``left``/``right`` map track id to a distorted pixel center. Both sides
    are undistorted before the epipolar test. ``one_to_one`` selects how a
    right id wanted by several left ids is resolved:

    ``none``
        every left id keeps its nearest right id (duplicates allowed);
    ``greedy``
        candidate pairs are accepted in ascending residual order;
    ``optimal``
        minimum total residual assignment among pairs under the threshold.
    """
    if one_to_one not in ONE_TO_ONE_MODES:
        raise ValueError(f"one_to_one must be one of {ONE_TO_ONE_MODES}")
    if not left or not right:
        return []
    lids = sorted(left)
    rids = sorted(right)
    lp = undistort_points(np.array([left[i] for i in lids], dtype=float), rig.K1, rig.dist1)
    rp = undistort_points(np.array([right[j] for j in rids], dtype=float), rig.K2, rig.dist2)
    D = _line_distances(F.F, lp, rp)
    ok = np.nan_to_num(D, nan=np.inf) <= threshold

    out: list[FrameMatch] = []
    if one_to_one == "none":
        for i, lid in enumerate(lids):
            cols = np.flatnonzero(ok[i])
            if cols.size:
                j = cols[np.argmin(D[i, cols])]
                out.append(FrameMatch(frame, lid, rids[j], float(D[i, j])))
    elif one_to_one == "greedy":
        pairs = sorted((float(D[i, j]), lids[i], rids[j], i, j) for i, j in zip(*np.nonzero(ok)))
        used_l, used_r = set(), set()
        for d, lid, rid, i, j in pairs:
            if i in used_l or j in used_r:
                continue
            used_l.add(i)
            used_r.add(j)
            out.append(FrameMatch(frame, lid, rid, d))
    else:
        if ok.any():
            big = 1e6 * (threshold + 1.0)
            cost = np.where(ok, np.nan_to_num(D, nan=big), big)
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if ok[i, j]:
                    out.append(FrameMatch(frame, lids[i], rids[j], float(D[i, j])))
    return sorted(out)


def _centers_by_frame(tracks: TrackSet) -> dict[int, dict[int, tuple[float, float]]]:
    out: dict[int, dict[int, tuple[float, float]]] = defaultdict(dict)
    for r in tracks.records:
        out[r.frame][r.id] = (r.cx, r.cy)
    return out


def match_tracks(
    left: TrackSet,
    right: TrackSet,
    rig: StereoRig,
    threshold: float = 10.0,
    one_to_one: str = "greedy",
) -> list[FrameMatch]:
    """Per-frame matches for every frame present in both views."""
    F = fundamental_from_rig(rig)
    lf = _centers_by_frame(left)
    rf = _centers_by_frame(right)
    out: list[FrameMatch] = []
    for frame in sorted(set(lf) & set(rf)):
        out.extend(match_frame(lf[frame], rf[frame], F, rig, threshold, one_to_one, frame))
    return out


def consensus(per_frame: Iterable[FrameMatch]) -> list[ConsensusMatch]:
    """Modal right id per left id; ties go to the smaller right id."""
    votes: dict[int, Counter] = defaultdict(Counter)
    for m in per_frame:
        votes[m.left_id][m.right_id] += 1
    out = []
    for lid in sorted(votes):
        counter = votes[lid]
        rid, support = min(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        out.append(ConsensusMatch(lid, rid, support, sum(counter.values())))
    return out


def format_frame_matches(matches: Sequence[FrameMatch]) -> str:
    lines = ["frame,left_id,right_id,residual"]
    lines += [f"{m.frame},{m.left_id},{m.right_id},{m.residual:.6f}" for m in matches]
    return "\n".join(lines) + "\n"


def format_consensus(matches: Sequence[ConsensusMatch]) -> str:
    lines = ["left_id,right_id,support,total"]
    lines += [f"{m.left_id},{m.right_id},{m.support},{m.total}" for m in matches]
    return "\n".join(lines) + "\n"


def parse_match_table(text: str) -> list[ConsensusMatch]:
    """Read a consensus table or a hand-made ``left_id,right_id`` table."""
    from .errors import MotFormatError

    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        return []
    header = [h.strip() for h in rows[0].split(",")]
    if "left_id" not in header or "right_id" not in header:
        raise MotFormatError("match table needs a header with left_id and right_id", 1)
    li, ri = header.index("left_id"), header.index("right_id")
    si = header.index("support") if "support" in header else None
    ti = header.index("total") if "total" in header else None
    out = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        parts = [p.strip() for p in row.split(",")]
        try:
            lid, rid = int(parts[li]), int(parts[ri])
            support = int(parts[si]) if si is not None else 0
            total = int(parts[ti]) if ti is not None else 0
        except (ValueError, IndexError):
            raise MotFormatError(f"bad match row {row!r}", lineno) from None
        if lid in seen:
            raise MotFormatError(f"left id {lid} matched twice", lineno)
        seen.add(lid)
        out.append(ConsensusMatch(lid, rid, support, total))
    return out
