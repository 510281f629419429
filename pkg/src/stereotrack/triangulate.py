"""Linear (DLT) triangulation of consensus-matched stereo tracks.

The world frame is the camera-1 frame; coordinates keep the calibration's
length unit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, MotFormatError, NumericalError, PointAtInfinityError
from .mot_io import StereoRig, TrackSet
from .stereo import ConsensusMatch, undistort_points

log = logging.getLogger(__name__)

TRACK3D_HEADER = "frame,left_id,right_id,x,y,z"
W_EPS = 1e-12


@dataclass(frozen=True)
class ProjectionPair:
    P1: np.ndarray
    P2: np.ndarray


@dataclass(frozen=True, order=True)
class Track3DRecord:
    frame: int
    left_id: int
    right_id: int
    x: float
    y: float
    z: float

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass
class Track3DSet:
    records: list[Track3DRecord]
    video_id: str = ""
    fps: float = 240.0
    failures: list[tuple[int, int, str]] = field(default_factory=list, compare=False)

    def __post_init__(self) -> None:
        self.records = sorted(self.records)
        keys = [(r.frame, r.left_id) for r in self.records]
        if len(set(keys)) != len(keys):
            raise MotFormatError("duplicate (frame, left_id) in 3D tracks")

    def __len__(self) -> int:
        return len(self.records)


def projection_pair(rig: StereoRig) -> ProjectionPair:
    P1 = rig.K1 @ np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = rig.K2 @ np.hstack([rig.R, rig.t.reshape(3, 1)])
    return ProjectionPair(P1, P2)


def project(P: np.ndarray, X: Sequence[float]) -> np.ndarray:
    """Pixel projection of a Cartesian point (or ``(N, 3)`` array) through ``P``."""
    X = np.asarray(X, dtype=float)
    h = np.concatenate([X, np.ones(X.shape[:-1] + (1,))], axis=-1) @ P.T
    return h[..., :2] / h[..., 2:3]


def triangulate_point(pair: ProjectionPair, x1: Sequence[float], x2: Sequence[float]) -> np.ndarray:
    """Homogeneous 4-vector from two undistorted pixel observations.

    World coordinates are rescaled so the translation column of each camera
    matrix is comparable to its rotation block, then each DLT row is scaled
    to unit length before the SVD. Without the rescale, unit rows would
    weight the two cameras by their translation magnitude. The returned
    vector has unit norm and a non-negative last coordinate.
    """
    scale = _world_scale(pair)
    S = np.diag([scale, scale, scale, 1.0])
    P1, P2 = pair.P1 @ S, pair.P2 @ S
    A = np.array(
        [
            x1[0] * P1[2] - P1[0],
            x1[1] * P1[2] - P1[1],
            x2[0] * P2[2] - P2[0],
            x2[1] * P2[2] - P2[1],
        ]
    )
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0):
        raise DegenerateGeometryError("zero row in triangulation system")
    A = A / norms[:, None]
    _, s, vt = np.linalg.svd(A)
    if s[2] <= 1e-12 * s[0]:
        raise DegenerateGeometryError("triangulation system is rank-deficient (coincident camera centers?)")
    h = vt[-1].copy()
    h[:3] *= scale
    h /= np.linalg.norm(h)
    return -h if h[3] < 0 else h


def _world_scale(pair: ProjectionPair) -> float:
    ratios = [
        np.linalg.norm(P[:, 3]) / np.linalg.norm(P[:, :3]) * np.sqrt(3.0)
        for P in (pair.P1, pair.P2)
    ]
    scale = max(ratios)
    return float(scale) if np.isfinite(scale) and scale > 0 else 1.0


def to_cartesian(h: Sequence[float]) -> tuple[float, float, float]:
    h = np.asarray(h, dtype=float)
    if abs(h[3]) <= W_EPS * max(1.0, float(np.abs(h[:3]).max())):
        raise PointAtInfinityError(f"homogeneous point {h.tolist()} lies at infinity")
    return (float(h[0] / h[3]), float(h[1] / h[3]), float(h[2] / h[3]))


def triangulate_tracks(
    left: TrackSet,
    right: TrackSet,
    matches: Sequence[ConsensusMatch],
    rig: StereoRig,
    fps: float = 240.0,
) -> Track3DSet:
    """3D record for each frame where a matched pair is visible in both views."""
    pair = projection_pair(rig)
    partner = {m.left_id: m.right_id for m in matches}
    right_at = {(r.frame, r.id): r.center for r in right.records}
    jobs = []
    for r in left.records:
        rid = partner.get(r.id)
        if rid is None or (r.frame, rid) not in right_at:
            continue
        jobs.append((r.frame, r.id, rid, r.center, right_at[(r.frame, rid)]))
    records: list[Track3DRecord] = []
    failures: list[tuple[int, int, str]] = []
    if jobs:
        p1 = undistort_points(np.array([j[3] for j in jobs]), rig.K1, rig.dist1)
        p2 = undistort_points(np.array([j[4] for j in jobs]), rig.K2, rig.dist2)
        for (frame, lid, rid, _, _), a, b in zip(jobs, p1, p2):
            try:
                x, y, z = to_cartesian(triangulate_point(pair, a, b))
            except NumericalError as exc:
                log.warning("frame %d left id %d: %s", frame, lid, exc)
                failures.append((frame, lid, str(exc)))
                continue
            records.append(Track3DRecord(frame, lid, rid, x, y, z))
    return Track3DSet(records, video_id=left.video_id, fps=fps, failures=failures)


def format_tracks3d(tracks: Track3DSet, decimals: int = 3) -> str:
    lines = [TRACK3D_HEADER]
    for r in tracks.records:
        lines.append(f"{r.frame},{r.left_id},{r.right_id},{r.x:.{decimals}f},{r.y:.{decimals}f},{r.z:.{decimals}f}")
    return "\n".join(lines) + "\n"


def parse_tracks3d(text: str, video_id: str = "", fps: float = 240.0) -> Track3DSet:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0].replace(" ", "") != TRACK3D_HEADER:
        raise MotFormatError(f"missing header {TRACK3D_HEADER!r}", 1)
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 6:
            raise MotFormatError("expected 6 columns", lineno)
        try:
            records.append(
                Track3DRecord(int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
            )
        except ValueError:
            raise MotFormatError(f"bad row {row!r}", lineno) from None
    return Track3DSet(records, video_id=video_id, fps=fps)
