"""Deterministic synthetic stereo scenes.

A scene is a set of 3D fish trajectories in the camera-1 frame, projected
through a stereo rig (pinhole plus forward lens distortion) into two track
sets with view-specific ids. ``degrade`` applies the configured corruptions
and logs every change, so tests know the exact recovery target.

Randomness comes from ``numpy.random.Generator`` with the PCG64 bit
generator; the algorithm name is written next to the seed in every emitted
scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .mot_io import StereoRig, TrackRecord, TrackSet, dump_calibration, format_clean, format_tracker_output
from .stereo import ConsensusMatch, FrameMatch, distort_points

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"
MODELS = ("linear", "helical", "random_walk")


def rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def default_rig() -> StereoRig:
    """Converging pair, 120 mm apart, both aimed at a point about 2.3 m away."""
    R = rotation((0, 1, 0), math.atan2(120.0, 2300.0)) @ rotation((1, 0, 0), math.radians(0.3))
    c2 = np.array([120.0, 2.0, 5.0])
    return StereoRig(
        K1=np.array([[1450.0, 0.0, 955.0], [0.0, 1452.0, 538.0], [0.0, 0.0, 1.0]]),
        K2=np.array([[1460.0, 0.0, 968.0], [0.0, 1458.0, 545.0], [0.0, 0.0, 1.0]]),
        dist1=np.array([-0.08, 0.02, 0.0005, -0.0003, 0.0]),
        dist2=np.array([-0.07, 0.015, -0.0004, 0.0002, 0.0]),
        R=R,
        t=-R @ c2,
    )


def random_rig(rng: np.random.Generator, distortion: bool = False) -> StereoRig:
    """Random valid rig: focal 800-2000 px, rotation up to 20 degrees, baseline 50-300.

    Radial distortion, when requested, stays invertible over the whole 1920x1080 image.
    """
    def intrinsics():
        f = rng.uniform(800, 2000)
        return np.array(
            [[f * rng.uniform(0.98, 1.02), rng.uniform(-1, 1), rng.uniform(800, 1100)],
             [0.0, f, rng.uniform(450, 650)],
             [0.0, 0.0, 1.0]]
        )

    def dist(K):
        if not distortion:
            return np.zeros(5)
        # reject coefficients whose radial map folds over before the image corners
        rc = math.hypot(max(K[0, 2], 1920 - K[0, 2]) / K[0, 0], max(K[1, 2], 1080 - K[1, 2]) / K[1, 1])
        r = np.linspace(0.0, 2.0 * rc, 200)
        while True:
            k1, k2 = rng.uniform(-0.1, 0.05), rng.uniform(-0.02, 0.02)
            slope = 1 + 3 * k1 * r**2 + 5 * k2 * r**4
            if slope.min() > 0.2 and 2 * rc * (1 + k1 * 4 * rc**2 + k2 * 16 * rc**4) > 1.2 * rc:
                return np.array([k1, k2, 0.0, 0.0, 0.0])

    R = rotation(rng.normal(size=3), math.radians(rng.uniform(0, 20)))
    c2 = rng.normal(size=3)
    c2 *= rng.uniform(50, 300) / np.linalg.norm(c2)
    K1, K2 = intrinsics(), intrinsics()
    return StereoRig(K1, K2, dist(K1), dist(K2), R, -R @ c2)


def project_ideal(rig: StereoRig, X: np.ndarray, camera: int) -> np.ndarray:
    """Undistorted pixel projection of ``(..., 3)`` camera-1 points."""
    X = np.asarray(X, dtype=float)
    if camera == 2:
        X = X @ rig.R.T + rig.t
    K = rig.K1 if camera == 1 else rig.K2
    h = X @ K.T
    return h[..., :2] / h[..., 2:3]


def project(rig: StereoRig, X: np.ndarray, camera: int) -> np.ndarray:
    """Distorted pixel projection, i.e. what a real camera would record."""
    K, dist = (rig.K1, rig.dist1) if camera == 1 else (rig.K2, rig.dist2)
    return distort_points(project_ideal(rig, X, camera), K, dist)


def depth(rig: StereoRig, X: np.ndarray, camera: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if camera == 2:
        X = X @ rig.R.T + rig.t
    return X[..., 2]


@dataclass(frozen=True)
class Fragment:
    """Split ``fish`` in ``view`` at ``split_frame``; ``gap`` frames before the new id are dropped."""

    fish: int
    view: str
    split_frame: int
    gap: int = 0


@dataclass(frozen=True)
class Dropout:
    fish: int
    view: str
    start: int
    end: int


@dataclass
class SceneConfig:
    n_fish: int = 9
    n_frames: int = 260
    model: str = "linear"
    rig: StereoRig | None = None
    noise_px: float = 0.0
    fragmentation: list[Fragment] = field(default_factory=list)
    dropout: list[Dropout] = field(default_factory=list)
    blips: int = 0
    blip_length: tuple[int, int] = (5, 20)
    blip_clearance_px: float = 200.0
    seed: int = 0
    image_size: tuple[int, int] = (1920, 1080)
    fps: float = 240.0
    depth_range: tuple[float, float] = (1800.0, 2800.0)
    speed_range: tuple[float, float] = (40.0, 250.0)
    fish_length: tuple[float, float] = (40.0, 90.0)
    min_separation_px: float = 0.0
    edge_margin_px: float = 60.0
    video_id: str = "synth"
    max_attempts: int = 2000

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.n_fish < 0 or self.n_frames < 1 or self.blips < 0:
            raise ConfigError("n_fish and blips must be >= 0, n_frames >= 1")
        lo, hi = self.blip_length
        if not 1 <= lo <= hi <= self.n_frames:
            raise ConfigError("blip_length must satisfy 1 <= lo <= hi <= n_frames")
        for fr in self.fragmentation:
            if fr.view not in ("left", "right") or not 1 < fr.split_frame <= self.n_frames or fr.gap < 0:
                raise ConfigError(f"bad fragment {fr}")
            if not 0 <= fr.fish < self.n_fish:
                raise ConfigError(f"fragment refers to unknown fish {fr.fish}")
        for d in self.dropout:
            if d.view not in ("left", "right") or not 1 <= d.start <= d.end <= self.n_frames:
                raise ConfigError(f"bad dropout {d}")
            if not 0 <= d.fish < self.n_fish:
                raise ConfigError(f"dropout refers to unknown fish {d.fish}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("rig")
        d["rng"] = RNG_ALGORITHM
        return d


@dataclass
class SceneTruth:
    cfg: SceneConfig
    rig: StereoRig
    positions: np.ndarray  # (n_fish, n_frames, 3), camera-1 frame
    left_px: np.ndarray  # (n_fish, n_frames, 2), distorted
    right_px: np.ndarray
    left_ids: list[int]
    right_ids: list[int]
    left: TrackSet
    right: TrackSet
    params: list[dict]

    @property
    def frames(self) -> np.ndarray:
        return np.arange(1, self.cfg.n_frames + 1)

    @property
    def correspondence(self) -> dict[int, int]:
        return dict(zip(self.left_ids, self.right_ids))

    def consensus_table(self) -> list[ConsensusMatch]:
        n = self.cfg.n_frames
        return [ConsensusMatch(l, r, n, n) for l, r in sorted(self.correspondence.items())]

    def fish_of(self, view: str, tid: int) -> int:
        ids = self.left_ids if view == "left" else self.right_ids
        return ids.index(tid)


@dataclass
class DegradeLog:
    """Where every degraded id came from; ``None`` marks a blip."""

    id_to_fish: dict[str, dict[int, int | None]]
    fragments: list[dict]
    dropped: dict[str, list[tuple[int, int]]]
    blips: list[dict]
    noise_px: float

    def to_dict(self) -> dict:
        return {
            "id_to_fish": {v: {str(k): f for k, f in m.items()} for v, m in self.id_to_fish.items()},
            "fragments": self.fragments,
            "dropped": {v: [list(x) for x in d] for v, d in self.dropped.items()},
            "blips": self.blips,
            "noise_px": self.noise_px,
        }


@dataclass
class Degraded:
    left: TrackSet
    right: TrackSet
    log: DegradeLog


def _trajectory(
    model: str, cfg: SceneConfig, K: np.ndarray, rng: np.random.Generator, t: np.ndarray
) -> tuple[np.ndarray, dict]:
    z0 = rng.uniform(*cfg.depth_range)
    # Start inside the central part of camera 1's view at that depth.
    w, h = cfg.image_size
    u = rng.uniform(0.2 * w, 0.8 * w)
    v = rng.uniform(0.2 * h, 0.8 * h)
    x0 = (u - K[0, 2]) * z0 / K[0, 0]
    y0 = (v - K[1, 2]) * z0 / K[1, 1]
    p0 = np.array([x0, y0, z0])
    if model == "linear":
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        vel = d * rng.uniform(*cfg.speed_range)
        return p0 + t[:, None] * vel, {"model": model, "p0": p0.tolist(), "velocity": vel.tolist()}
    if model == "helical":
        radius = rng.uniform(60.0, 150.0)
        omega0 = rng.uniform(1.5, 3.0) * rng.choice([-1.0, 1.0])
        beta = rng.uniform(1.0, 3.0) * np.sign(omega0)
        vy = rng.uniform(-60.0, 60.0)
        theta0 = rng.uniform(0, 2 * math.pi)
        theta = theta0 + omega0 * t + 0.5 * beta * t * t
        center = p0 - radius * np.array([math.cos(theta0), 0.0, math.sin(theta0)])
        pos = np.column_stack(
            [center[0] + radius * np.cos(theta), center[1] + vy * t, center[2] + radius * np.sin(theta)]
        )
        return pos, {
            "model": model,
            "center": center.tolist(),
            "radius": radius,
            "theta0": theta0,
            "omega0": omega0,
            "beta": beta,
            "vy": vy,
        }
    # random walk on velocity, integrated to positions
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    speed = rng.uniform(*cfg.speed_range)
    d = rng.normal(size=3)
    vel = d / np.linalg.norm(d) * speed
    pos = [p0]
    for _ in range(len(t) - 1):
        vel = vel + rng.normal(scale=speed * 0.05, size=3)
        s = np.linalg.norm(vel)
        lo, hi = cfg.speed_range
        vel = vel * (min(max(s, lo), hi) / s)
        pos.append(pos[-1] + vel * dt)
    return np.array(pos), {"model": model, "p0": p0.tolist()}


def helix_speed(params: dict, t: np.ndarray) -> np.ndarray:
    dtheta = params["omega0"] + params["beta"] * t
    return np.sqrt((params["radius"] * dtheta) ** 2 + params["vy"] ** 2)


def helix_acceleration(params: dict, t: np.ndarray) -> np.ndarray:
    """Time derivative of speed along the helix."""
    dtheta = params["omega0"] + params["beta"] * t
    return params["radius"] ** 2 * dtheta * params["beta"] / helix_speed(params, t)


def _in_view(px: np.ndarray, z: np.ndarray, cfg: SceneConfig) -> bool:
    w, h = cfg.image_size
    m = cfg.edge_margin_px
    return bool(
        np.all(z > 0)
        and np.all(px[:, 0] >= m) and np.all(px[:, 0] <= w - m)
        and np.all(px[:, 1] >= m) and np.all(px[:, 1] <= h - m)
    )


def generate(cfg: SceneConfig) -> SceneTruth:
    """Sample trajectories until every fish stays inside both images for the whole clip."""
    rig = cfg.rig or default_rig()
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.n_frames) / cfg.fps
    positions, lpx, rpx, params, lengths = [], [], [], [], []
    for fish in range(cfg.n_fish):
        for _ in range(cfg.max_attempts):
            pos, prm = _trajectory(cfg.model, cfg, rig.K1, rng, t)
            pl, pr = project(rig, pos, 1), project(rig, pos, 2)
            if not (_in_view(pl, depth(rig, pos, 1), cfg) and _in_view(pr, depth(rig, pos, 2), cfg)):
                continue
            if cfg.min_separation_px > 0 and any(
                np.min(np.linalg.norm(pl - ol, axis=1)) < cfg.min_separation_px
                or np.min(np.linalg.norm(pr - orr, axis=1)) < cfg.min_separation_px
                for ol, orr in zip(lpx, rpx)
            ):
                continue
            break
        else:
            raise ConfigError(f"could not place fish {fish} inside both views in {cfg.max_attempts} attempts")
        positions.append(pos)
        lpx.append(pl)
        rpx.append(pr)
        params.append(prm)
        lengths.append(rng.uniform(*cfg.fish_length))

    left_ids = [int(i) + 1 for i in rng.permutation(cfg.n_fish)]
    right_ids = [int(i) + 1 for i in rng.permutation(cfg.n_fish)]
    positions = np.array(positions).reshape(cfg.n_fish, cfg.n_frames, 3)
    lpx = np.array(lpx).reshape(cfg.n_fish, cfg.n_frames, 2)
    rpx = np.array(rpx).reshape(cfg.n_fish, cfg.n_frames, 2)

    def trackset(px, ids, camera, view):
        K = rig.K1 if camera == 1 else rig.K2
        recs = []
        for fish in range(cfg.n_fish):
            z = depth(rig, positions[fish], camera)
            x_off = K[0, 0] * lengths[fish] / (2 * z)
            y_off = K[1, 1] * 0.4 * lengths[fish] / (2 * z)
            for k in range(cfg.n_frames):
                recs.append(TrackRecord(k + 1, ids[fish], float(px[fish, k, 0]), float(px[fish, k, 1]),
                                        float(x_off[k]), float(y_off[k])))
        return TrackSet(recs, cfg.video_id, view, cfg.n_frames, cfg.image_size)

    return SceneTruth(
        cfg=cfg,
        rig=rig,
        positions=positions,
        left_px=lpx,
        right_px=rpx,
        left_ids=left_ids,
        right_ids=right_ids,
        left=trackset(lpx, left_ids, 1, "left"),
        right=trackset(rpx, right_ids, 2, "right"),
        params=params,
    )


def degrade(truth: SceneTruth, cfg: SceneConfig | None = None) -> Degraded:
    """Apply the corruptions configured in ``cfg`` (default: the scene's own)."""
    cfg = cfg or truth.cfg
    rng = np.random.default_rng([cfg.seed, 1])
    out = {}
    id_to_fish: dict[str, dict[int, int | None]] = {}
    dropped: dict[str, list[tuple[int, int]]] = {}
    frag_log: list[dict] = []
    blip_log: list[dict] = []
    for view in ("left", "right"):
        base = truth.left if view == "left" else truth.right
        ids = truth.left_ids if view == "left" else truth.right_ids
        px = truth.left_px if view == "left" else truth.right_px
        mapping: dict[int, int | None] = {tid: fish for fish, tid in enumerate(ids)}
        next_id = max(ids, default=0) + 1
        # frame -> id per fish after fragmentation; None = dropped
        label = {fish: {f: ids[fish] for f in range(1, cfg.n_frames + 1)} for fish in range(cfg.n_fish)}
        for fr in sorted((f for f in cfg.fragmentation if f.view == view), key=lambda f: (f.fish, f.split_frame)):
            new = next_id
            next_id += 1
            mapping[new] = fr.fish
            for f in range(fr.split_frame, cfg.n_frames + 1):
                if label[fr.fish][f] is not None:
                    label[fr.fish][f] = None if f < fr.split_frame + fr.gap else new
            frag_log.append({"view": view, "fish": fr.fish, "old_id": ids[fr.fish], "new_id": new,
                             "split_frame": fr.split_frame, "gap": fr.gap})
        for d in cfg.dropout:
            if d.view == view:
                for f in range(d.start, d.end + 1):
                    label[d.fish][f] = None
        records = []
        lost = []
        for r in base.records:
            fish = ids.index(r.id)
            new_id = label[fish][r.frame]
            if new_id is None:
                lost.append((fish, r.frame))
                continue
            records.append(TrackRecord(r.frame, new_id, r.cx, r.cy, r.x_off, r.y_off))

        w, h = cfg.image_size
        for _ in range(cfg.blips):
            length = int(rng.integers(cfg.blip_length[0], cfg.blip_length[1] + 1))
            for _ in range(cfg.max_attempts):
                start = int(rng.integers(1, cfg.n_frames - length + 2))
                c = np.array([rng.uniform(100, w - 100), rng.uniform(100, h - 100)])
                lo = max(0, start - 1 - 110)
                hi = min(cfg.n_frames, start - 1 + length + 110)
                if cfg.n_fish == 0 or np.min(np.linalg.norm(px[:, lo:hi] - c, axis=2)) >= cfg.blip_clearance_px:
                    break
            else:
                raise ConfigError("could not place a false-positive blip away from all fish")
            bid = next_id
            next_id += 1
            mapping[bid] = None
            drift = rng.normal(scale=0.5, size=2)
            half = rng.uniform(8, 25, size=2)
            for k in range(length):
                records.append(TrackRecord(start + k, bid, float(c[0] + drift[0] * k), float(c[1] + drift[1] * k),
                                           float(half[0]), float(half[1])))
            blip_log.append({"view": view, "id": bid, "start": start, "end": start + length - 1})

        if cfg.noise_px > 0:
            noise = rng.normal(scale=cfg.noise_px, size=(len(records), 2))
            records = [
                TrackRecord(r.frame, r.id, r.cx + float(n[0]), r.cy + float(n[1]), r.x_off, r.y_off)
                for r, n in zip(sorted(records), noise)
            ]
        out[view] = TrackSet(records, base.video_id, view, base.frame_count, base.image_size)
        id_to_fish[view] = {k: mapping[k] for k in sorted(mapping) if any(r.id == k for r in records)}
        dropped[view] = lost
    log = DegradeLog(id_to_fish, frag_log, dropped, blip_log, cfg.noise_px)
    return Degraded(out["left"], out["right"], log)


def corrupt_matches(
    matches: Sequence[FrameMatch], fraction: float, right_ids: Sequence[int], rng: np.random.Generator
) -> list[FrameMatch]:
    """Replace the right id of ``round(fraction * len)`` matches with a different random right id."""
    matches = list(matches)
    n = int(round(fraction * len(matches)))
    idx = rng.choice(len(matches), size=n, replace=False) if n else []
    choices = sorted(right_ids)
    for i in idx:
        m = matches[i]
        others = [r for r in choices if r != m.right_id]
        matches[i] = FrameMatch(m.frame, m.left_id, int(rng.choice(others)), m.residual)
    return matches


def write_scene(truth: SceneTruth, degraded: Degraded | None, out_dir: str | Path) -> dict[str, Path]:
    """Emit a scene directory in the pipeline's input layout.

    ``calibration.txt``, ``gt/<vid>_{1,2}_clean.txt``, ``gt/<vid>_matches.csv``,
    ``tracks/<vid>_{1,2}_tr.csv`` (degraded tracker output) and ``truth.json``.
    """
    out_dir = Path(out_dir)
    vid = truth.cfg.video_id
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    (out_dir / "tracks").mkdir(parents=True, exist_ok=True)
    degraded = degraded or Degraded(truth.left, truth.right, DegradeLog({}, [], {}, [], 0.0))
    paths = {
        "calibration": out_dir / "calibration.txt",
        "gt_left": out_dir / "gt" / f"{vid}_1_clean.txt",
        "gt_right": out_dir / "gt" / f"{vid}_2_clean.txt",
        "gt_matches": out_dir / "gt" / f"{vid}_matches.csv",
        "tracks_left": out_dir / "tracks" / f"{vid}_1_tr.csv",
        "tracks_right": out_dir / "tracks" / f"{vid}_2_tr.csv",
        "truth": out_dir / "truth.json",
    }
    paths["calibration"].write_text(dump_calibration(truth.rig))
    paths["gt_left"].write_text(format_clean(truth.left))
    paths["gt_right"].write_text(format_clean(truth.right))
    paths["gt_matches"].write_text(
        "left_id,right_id\n" + "".join(f"{l},{r}\n" for l, r in sorted(truth.correspondence.items()))
    )
    paths["tracks_left"].write_text(format_tracker_output(degraded.left))
    paths["tracks_right"].write_text(format_tracker_output(degraded.right))
    doc = {
        "config": truth.cfg.to_dict(),
        "n_frames": truth.cfg.n_frames,
        "left_ids": truth.left_ids,
        "right_ids": truth.right_ids,
        "params": truth.params,
        "degradation": degraded.log.to_dict(),
        "positions": truth.positions.tolist(),
    }
    paths["truth"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return paths
