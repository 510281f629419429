"""Motion analytics over 2D or 3D tracks, plus plot-ready exports.

Finite differences use the true frame gap between consecutive observations;
missing frames are never interpolated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .mot_io import TrackSet
from .triangulate import Track3DSet

Tracks = Union[TrackSet, Track3DSet]


@dataclass(frozen=True)
class KinematicSeries:
    id: int
    quantity: str
    units: str
    frames: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class DensityGrid:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class SpatialSummary:
    id: int
    n: int
    centroid: tuple[float, ...]
    minimum: tuple[float, ...]
    maximum: tuple[float, ...]
    std: tuple[float, ...]


def trajectories(t: Tracks) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per id: frame numbers and an ``(N, d)`` position array (d = 2 or 3).

    3D tracks are keyed by their left id.
    """
    groups: dict[int, list] = {}
    if isinstance(t, Track3DSet):
        for r in t.records:
            groups.setdefault(r.left_id, []).append((r.frame, r.x, r.y, r.z))
    else:
        for r in t.records:
            groups.setdefault(r.id, []).append((r.frame, r.cx, r.cy))
    out = {}
    for tid in sorted(groups):
        arr = np.array(sorted(groups[tid]), dtype=float)
        out[tid] = (arr[:, 0].astype(int), arr[:, 1:])
    return out


def _unit(t: Tracks) -> str:
    return "units" if isinstance(t, Track3DSet) else "px"


def _speed(frames: np.ndarray, pos: np.ndarray, fps: float) -> tuple[np.ndarray, np.ndarray]:
    if len(frames) < 2:
        return np.zeros(0, dtype=int), np.zeros(0)
    dt = np.diff(frames) / fps
    return frames[1:], np.linalg.norm(np.diff(pos, axis=0), axis=1) / dt


def speed_series(t: Tracks, fps: float = 240.0) -> dict[int, KinematicSeries]:
    """Speed at each observation from the previous one: |p_i - p_{i-1}| / ((f_i - f_{i-1}) / fps)."""
    unit = _unit(t)
    out = {}
    for tid, (frames, pos) in trajectories(t).items():
        f, v = _speed(frames, pos, fps)
        out[tid] = KinematicSeries(tid, "speed", f"{unit}/s", f, v)
    return out


def acceleration_series(speed: KinematicSeries, fps: float = 240.0) -> KinematicSeries:
    """Rate of change of speed between consecutive speed samples."""
    units = speed.units.replace("/s", "/s^2")
    if len(speed) < 2:
        return KinematicSeries(speed.id, "acceleration", units, np.zeros(0, dtype=int), np.zeros(0))
    dt = np.diff(speed.frames) / fps
    return KinematicSeries(speed.id, "acceleration", units, speed.frames[1:], np.diff(speed.values) / dt)


def path_length(t: Tracks, tid: int) -> float:
    frames, pos = trajectories(t)[tid]
    return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()) if len(frames) > 1 else 0.0


def displacement(t: Tracks, tid: int) -> float:
    _, pos = trajectories(t)[tid]
    return float(np.linalg.norm(pos[-1] - pos[0]))


def density_map(t: Tracks, bins: int | Sequence = 20, axes: tuple[int, int] = (0, 1), range=None) -> DensityGrid:
    """2D histogram of all positions over the chosen pair of axes."""
    pts = [pos[:, list(axes)] for _, pos in trajectories(t).values()]
    if not pts:
        return DensityGrid(np.zeros(0), np.zeros(0), np.zeros((0, 0), dtype=int))
    xy = np.vstack(pts)
    counts, xe, ye = np.histogram2d(xy[:, 0], xy[:, 1], bins=bins, range=range)
    return DensityGrid(xe, ye, counts.astype(int))


def spatial_distribution(t: Tracks) -> list[SpatialSummary]:
    out = []
    for tid, (frames, pos) in trajectories(t).items():
        out.append(
            SpatialSummary(
                tid,
                len(frames),
                tuple(pos.mean(axis=0).tolist()),
                tuple(pos.min(axis=0).tolist()),
                tuple(pos.max(axis=0).tolist()),
                tuple(pos.std(axis=0).tolist()),
            )
        )
    return out


def temporal_pattern(t: Tracks, window: int = 24) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Visible-id count per observed frame and its trailing moving average."""
    counts: dict[int, int] = {}
    for r in t.records:
        counts[r.frame] = counts.get(r.frame, 0) + 1
    if not counts:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0)
    frames = np.array(sorted(counts))
    c = np.array([counts[f] for f in frames])
    csum = np.concatenate([[0], np.cumsum(c)])
    idx = np.arange(1, len(c) + 1)
    lo = np.maximum(0, idx - window)
    avg = (csum[idx] - csum[lo]) / (idx - lo)
    return frames, c, avg


def depth_series(t3d: Track3DSet) -> dict[int, KinematicSeries]:
    return {
        tid: KinematicSeries(tid, "depth", "units", frames, pos[:, 2])
        for tid, (frames, pos) in trajectories(t3d).items()
    }


def overlay_geometry(tracks: TrackSet) -> dict[str, list[dict]]:
    """Frame -> boxes to draw, replacing a rendered overlay video."""
    out: dict[str, list[dict]] = {}
    for frame, recs in sorted(tracks.by_frame().items()):
        out[str(frame)] = [
            {"id": r.id, "box": [round(v, 3) for v in r.corners]} for r in sorted(recs, key=lambda r: r.id)
        ]
    return out


def _series_csv(series: dict[int, KinematicSeries], column: str) -> str:
    lines = [f"id,frame,{column}"]
    for tid, s in series.items():
        lines += [f"{tid},{f},{v:.6f}" for f, v in zip(s.frames, s.values)]
    return "\n".join(lines) + "\n"


def write_analysis(t: Tracks, out_dir: str | Path, fps: float = 240.0, bins: int = 20,
                   window: int = 24, svg: bool = True) -> dict[str, int]:
    """Write every analytic as CSV (and optional SVG) into ``out_dir``.

    Returns the number of data rows per file, used in run manifests.
    """
    from . import plots

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts: dict[str, int] = {}

    def emit(name: str, text: str) -> None:
        (out_dir / name).write_text(text)
        counts[name] = text.count("\n") - 1

    traj = trajectories(t)
    dims = "x,y,z" if isinstance(t, Track3DSet) else "x,y"
    lines = [f"id,frame,{dims}"]
    for tid, (frames, pos) in traj.items():
        lines += [f"{tid},{f}," + ",".join(f"{v:.3f}" for v in p) for f, p in zip(frames, pos)]
    emit("trajectories.csv", "\n".join(lines) + "\n")

    speeds = speed_series(t, fps)
    accels = {tid: acceleration_series(s, fps) for tid, s in speeds.items()}
    emit("speed.csv", _series_csv(speeds, "speed"))
    emit("acceleration.csv", _series_csv(accels, "acceleration"))

    lines = ["id,path_length,displacement"]
    lines += [f"{tid},{path_length(t, tid):.3f},{displacement(t, tid):.3f}" for tid in traj]
    emit("path_length.csv", "\n".join(lines) + "\n")

    axes = "xyz"[: 3 if isinstance(t, Track3DSet) else 2]
    lines = ["id,n," + ",".join(f"{s}_{a}" for s in ("mean", "min", "max", "std") for a in axes)]
    for s in spatial_distribution(t):
        vals = s.centroid + s.minimum + s.maximum + s.std
        lines.append(f"{s.id},{s.n}," + ",".join(f"{v:.3f}" for v in vals))
    emit("spatial_distribution.csv", "\n".join(lines) + "\n")

    grid = density_map(t, bins)
    lines = ["x_lo,x_hi,y_lo,y_hi,count"]
    for i in range(grid.counts.shape[0]):
        for j in range(grid.counts.shape[1]):
            lines.append(
                f"{grid.x_edges[i]:.3f},{grid.x_edges[i + 1]:.3f},{grid.y_edges[j]:.3f},"
                f"{grid.y_edges[j + 1]:.3f},{grid.counts[i, j]}"
            )
    emit("density.csv", "\n".join(lines) + "\n")

    frames, c, avg = temporal_pattern(t, window)
    lines = ["frame,visible,moving_average"] + [f"{f},{n},{a:.6f}" for f, n, a in zip(frames, c, avg)]
    emit("temporal_pattern.csv", "\n".join(lines) + "\n")

    depths = {}
    if isinstance(t, Track3DSet):
        depths = depth_series(t)
        emit("depth.csv", _series_csv(depths, "depth"))
    else:
        (out_dir / "overlay.json").write_text(json.dumps(overlay_geometry(t), indent=1) + "\n")

    if svg:
        plots.write_figures(out_dir, traj, speeds, accels, grid, (frames, c, avg), depths, fps)
    return counts
