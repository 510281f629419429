"""Bare-bones SVG figures: polylines on a framed axis box, and a heat map."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H, PAD = 640, 400, 50
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _frame(title: str, xlabel: str, ylabel: str, xr: tuple[float, float], yr: tuple[float, float]) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{H - PAD + 15}" font-size="10">{xr[0]:.4g}</text>',
        f'<text x="{W - PAD}" y="{H - PAD + 15}" text-anchor="end" font-size="10">{xr[1]:.4g}</text>',
        f'<text x="{PAD - 5}" y="{H - PAD}" text-anchor="end" font-size="10">{yr[0]:.4g}</text>',
        f'<text x="{PAD - 5}" y="{PAD + 10}" text-anchor="end" font-size="10">{yr[1]:.4g}</text>',
    ]


def _range(values: list[np.ndarray]) -> tuple[float, float]:
    vals = np.concatenate([v for v in values if len(v)]) if any(len(v) for v in values) else np.zeros(1)
    lo, hi = float(vals.min()), float(vals.max())
    return (lo, hi) if hi > lo else (lo - 1.0, hi + 1.0)


def line_plot(series: dict[int, tuple[np.ndarray, np.ndarray]], title: str, xlabel: str, ylabel: str) -> str:
    xr = _range([x for x, _ in series.values()])
    yr = _range([y for _, y in series.values()])
    sx = (W - 2 * PAD) / (xr[1] - xr[0])
    sy = (H - 2 * PAD) / (yr[1] - yr[0])
    out = _frame(title, xlabel, ylabel, xr, yr)
    for k, (tid, (x, y)) in enumerate(series.items()):
        if not len(x):
            continue
        pts = " ".join(f"{PAD + (a - xr[0]) * sx:.2f},{H - PAD - (b - yr[0]) * sy:.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{PALETTE[k % len(PALETTE)]}" stroke-width="1" points="{pts}">'
                   f"<title>id {tid}</title></polyline>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heat_map(counts: np.ndarray, x_edges: np.ndarray, y_edges: np.ndarray, title: str) -> str:
    xr = (float(x_edges[0]), float(x_edges[-1])) if len(x_edges) else (0.0, 1.0)
    yr = (float(y_edges[0]), float(y_edges[-1])) if len(y_edges) else (0.0, 1.0)
    out = _frame(title, "x", "y", xr, yr)
    if counts.size:
        nx, ny = counts.shape
        cw, ch = (W - 2 * PAD) / nx, (H - 2 * PAD) / ny
        peak = max(int(counts.max()), 1)
        for i in range(nx):
            for j in range(ny):
                if counts[i, j]:
                    shade = int(255 * (1 - counts[i, j] / peak))
                    out.append(
                        f'<rect x="{PAD + i * cw:.2f}" y="{H - PAD - (j + 1) * ch:.2f}" width="{cw:.2f}" '
                        f'height="{ch:.2f}" fill="rgb(255,{shade},{shade})"/>'
                    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_figures(out_dir: Path, traj, speeds, accels, grid, temporal, depths, fps: float) -> None:
    def secs(frames):
        return np.asarray(frames, dtype=float) / fps

    (out_dir / "trajectories.svg").write_text(
        line_plot({tid: (pos[:, 0], pos[:, 1]) for tid, (_, pos) in traj.items()}, "Trajectories", "x", "y")
    )
    (out_dir / "speed.svg").write_text(
        line_plot({tid: (secs(s.frames), s.values) for tid, s in speeds.items()}, "Speed", "time (s)", "speed")
    )
    (out_dir / "acceleration.svg").write_text(
        line_plot({tid: (secs(s.frames), s.values) for tid, s in accels.items()}, "Acceleration", "time (s)",
                  "acceleration")
    )
    (out_dir / "density.svg").write_text(heat_map(grid.counts, grid.x_edges, grid.y_edges, "Density"))
    frames, c, avg = temporal
    (out_dir / "temporal_pattern.svg").write_text(
        line_plot({0: (secs(frames), c.astype(float)), 1: (secs(frames), avg)}, "Visible ids", "time (s)", "count")
    )
    if depths:
        (out_dir / "depth.svg").write_text(
            line_plot({tid: (secs(s.frames), s.values) for tid, s in depths.items()}, "Depth", "time (s)", "z")
        )
