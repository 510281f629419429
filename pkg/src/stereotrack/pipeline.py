"""End-to-end stereo run: import, re-ID, match, triangulate, analyze, evaluate.

Each video pair gets its own subdirectory of the run directory. The top-level
``manifest.json`` holds everything needed for a replay, including input sha256
digests; ``load_manifest`` turns it back into jobs and config. Only
``created_at``/``finished_at`` differ between identical runs.
"""

from __future__ import annotations

import hashlib
import json
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import PipelineConfig, config_from_dict, format_config
from .errors import DataError, NumericalError, StereoTrackError
from .kinematics import write_analysis
from .metrics import completeness_json, evaluate, format_margin_table, format_metric_table
from .mot_io import TrackSet, format_clean, read_calibration, read_tracks
from .reid import reidentify
from .stereo import consensus, format_consensus, format_frame_matches, match_tracks, parse_match_table
from .triangulate import format_tracks3d, triangulate_tracks

STAGES = ("01_import", "02_reid", "03_match", "04_triangulate", "05_analyze", "06_evaluate")
FAILED_MARKER = "FAILED"
MANIFEST = "manifest.json"


@dataclass
class PairJob:
    """Inputs for one stereo pair. Optional paths may be ``None``."""

    video_id: str
    left: Path
    right: Path
    calibration: Path
    gt_left: Path | None = None
    gt_right: Path | None = None
    gt_matches: Path | None = None
    matches: Path | None = None
    frame_count: int | None = None

    def inputs(self) -> dict[str, Path]:
        names = ("left", "right", "calibration", "gt_left", "gt_right", "gt_matches", "matches")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def to_dict(self) -> dict:
        d = {k: str(Path(v).resolve()) for k, v in self.inputs().items()}
        d["video_id"] = self.video_id
        d["frame_count"] = self.frame_count
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PairJob:
        paths = {k: Path(v) for k, v in d.items() if k not in ("video_id", "frame_count")}
        return cls(video_id=d["video_id"], frame_count=d.get("frame_count"), **paths)


@dataclass
class StageResult:
    name: str
    status: str
    counts: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    error: str | None = None


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _find(directory: Path, names: list[str]) -> Path | None:
    for n in names:
        if (directory / n).is_file():
            return directory / n
    return None


def discover_pairs(scene: str | Path) -> list[PairJob]:
    """Find ``<vid>_1*``/``<vid>_2*`` track pairs in ``scene`` or ``scene/tracks``.

    Calibration is ``calibration/<vid>.txt``, ``<vid>_calibration.txt`` or a
    shared ``calibration.txt``. Ground truth, when present, lives in ``gt/``.
    """
    scene = Path(scene)
    track_dir = scene / "tracks" if (scene / "tracks").is_dir() else scene
    jobs = []
    for left in sorted(track_dir.iterdir()):
        m = re.match(r"^(.+)_1(_.*)?(\.[^.]+)$", left.name)
        if not m or not left.is_file() or "calibration" in left.name:
            continue
        vid, rest, ext = m.group(1), m.group(2) or "", m.group(3)
        right = track_dir / f"{vid}_2{rest}{ext}"
        if not right.is_file():
            continue
        calib = _find(scene, [f"calibration/{vid}.txt", f"{vid}_calibration.txt", "calibration.txt"])
        if calib is None:
            raise DataError(f"no calibration file found for video {vid!r} in {scene}")
        gt = scene / "gt"
        jobs.append(
            PairJob(
                vid,
                left,
                right,
                calib,
                gt_left=_find(gt, [f"{vid}_1_clean.txt", f"{vid}_1.txt"]),
                gt_right=_find(gt, [f"{vid}_2_clean.txt", f"{vid}_2.txt"]),
                gt_matches=_find(gt, [f"{vid}_matches.csv"]),
                matches=_find(scene, [f"matches/{vid}_matches.csv"]),
            )
        )
    if not jobs:
        raise DataError(f"no _1/_2 track pairs found in {track_dir}")
    return jobs


def _write(path: Path, text: str, run_dir: Path, outputs: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    outputs.append(path.relative_to(run_dir).as_posix())


def _id_counts(rows: list[tuple[str, int | None, int, int]]) -> str:
    lines = ["ID,GT IDs,Before Re-ID,After Re-ID"]
    for name, gt, before, after in rows:
        lines.append(f"{name},{'' if gt is None else gt},{before},{after}")
    return "\n".join(lines) + "\n"


def run_pair(job: PairJob, run_dir: str | Path, cfg: PipelineConfig) -> dict:
    """Run all stages for one pair; returns the manifest fragment.

    Never raises: a failing stage is recorded with its error and a
    ``FAILED`` marker is written next to the partial outputs.
    """
    run_dir = Path(run_dir)
    pair_dir = run_dir / job.video_id
    pair_dir.mkdir(parents=True, exist_ok=True)
    stages: list[StageResult] = []
    state: dict = {}

    def stage(name: str, fn) -> bool:
        res = StageResult(name, "ok")
        try:
            fn(pair_dir / name, res)
        except (StereoTrackError, ValueError, ArithmeticError, OSError) as exc:
            res.status = "failed"
            res.error = f"{type(exc).__name__}: {exc}"
            kind = "numerical" if isinstance(exc, (NumericalError, ArithmeticError)) else "data"
            (pair_dir / FAILED_MARKER).write_text(f"{name}\n{kind}\n{res.error}\n")
            stages.append(res)
            return False
        stages.append(res)
        return True

    def s_import(d: Path, res: StageResult) -> None:
        meta = dict(video_id=job.video_id, image_size=cfg.image_size)
        left = read_tracks(job.left, view="left", **meta)
        right = read_tracks(job.right, view="right", **meta)
        gt = None
        if job.gt_left and job.gt_right:
            gt = (read_tracks(job.gt_left, view="left", **meta), read_tracks(job.gt_right, view="right", **meta))
        n = job.frame_count or max([left.n_frames, right.n_frames] + ([g.n_frames for g in gt] if gt else []))
        left = TrackSet(left.records, job.video_id, "left", n, cfg.image_size)
        right = TrackSet(right.records, job.video_id, "right", n, cfg.image_size)
        state.update(left=left, right=right, gt=gt, rig=read_calibration(job.calibration), n_frames=n)
        for view, t in (("1", left), ("2", right)):
            _write(d / f"{job.video_id}_{view}_clean.txt", format_clean(t), run_dir, res.outputs)
        res.counts = {"frames": n, "left_records": len(left), "right_records": len(right),
                      "left_ids": len(left.ids()), "right_ids": len(right.ids())}

    def s_reid(d: Path, res: StageResult) -> None:
        rows = []
        for view, key in (("1", "left"), ("2", "right")):
            before = state[key]
            after, report = reidentify(before, cfg.reid())
            state[key + "_reid"] = after
            _write(d / f"{job.video_id}_{view}_reid.txt", format_clean(after), run_dir, res.outputs)
            _write(d / f"{job.video_id}_{view}_reid.json", json.dumps(report.to_dict(), indent=1) + "\n",
                   run_dir, res.outputs)
            gt_ids = len(state["gt"][0 if key == "left" else 1].ids()) if state["gt"] else None
            rows.append((f"{job.video_id}_{view}", gt_ids, report.ids_before, report.ids_after))
            res.counts[f"{key}_ids_before"] = report.ids_before
            res.counts[f"{key}_ids_after"] = report.ids_after
            res.counts[f"{key}_merges"] = len(report.merges)
        _write(d / "id_counts.csv", _id_counts(rows), run_dir, res.outputs)
        state["id_rows"] = rows

    def s_match(d: Path, res: StageResult) -> None:
        per_frame = match_tracks(state["left_reid"], state["right_reid"], state["rig"], cfg.match_threshold,
                                 cfg.match_one_to_one)
        cons = consensus(per_frame)
        _write(d / "frame_matches.csv", format_frame_matches(per_frame), run_dir, res.outputs)
        _write(d / "consensus.csv", format_consensus(cons), run_dir, res.outputs)
        used = cons
        if job.matches is not None:
            used = parse_match_table(job.matches.read_text())
            _write(d / "matches_used.csv", format_consensus(used), run_dir, res.outputs)
        state["matches"] = used
        res.counts = {"frame_matches": len(per_frame), "consensus_pairs": len(cons), "pairs_used": len(used),
                      "manual": job.matches is not None}

    def s_triangulate(d: Path, res: StageResult) -> None:
        t3d = triangulate_tracks(state["left_reid"], state["right_reid"], state["matches"], state["rig"], cfg.fps)
        state["t3d"] = t3d
        _write(d / f"{job.video_id}_3d.csv", format_tracks3d(t3d), run_dir, res.outputs)
        if t3d.failures:
            lines = ["frame,left_id,error"] + [f"{f},{i},{e}" for f, i, e in t3d.failures]
            _write(d / "failures.csv", "\n".join(lines) + "\n", run_dir, res.outputs)
        res.counts = {"points": len(t3d), "failures": len(t3d.failures)}

    def s_analyze(d: Path, res: StageResult) -> None:
        for sub, tracks in (("3d", state["t3d"]), ("left", state["left_reid"]), ("right", state["right_reid"])):
            counts = write_analysis(tracks, d / sub, cfg.fps, cfg.density_bins, cfg.temporal_window, cfg.svg)
            res.counts[sub] = dict(sorted(counts.items()))
        res.outputs.extend(sorted(p.relative_to(run_dir).as_posix() for p in d.rglob("*") if p.is_file()))

    def s_evaluate(d: Path, res: StageResult) -> None:
        if state["gt"] is None:
            res.status = "skipped"
            return
        ecfg = cfg.evaluation()
        evals = {}
        for view, gt, pred in (("1", state["gt"][0], state["left_reid"]), ("2", state["gt"][1], state["right_reid"])):
            evals[f"{job.video_id}_{view}"] = evaluate(gt, pred, ecfg, f"{job.video_id}_{view}")
        state["evals"] = evals
        _write(d / "metrics.csv", format_metric_table([(k, e.report) for k, e in evals.items()]), run_dir,
               res.outputs)
        _write(d / "margins.csv", format_margin_table([(k, e.margins) for k, e in evals.items()]), run_dir,
               res.outputs)
        frames_json, counts_json = completeness_json({k: e.completeness for k, e in evals.items()})
        _write(d / "completeness_frames.json", frames_json, run_dir, res.outputs)
        _write(d / "completeness_counts.json", counts_json, run_dir, res.outputs)
        if job.gt_matches is not None:
            acc = stereo_match_accuracy(state, parse_match_table(job.gt_matches.read_text()))
            _write(d / "stereo_matching.csv", f"correct,total,accuracy\n{acc[0]},{acc[1]},{acc[2]:.3f}\n",
                   run_dir, res.outputs)
            res.counts["stereo_correct"] = acc[0]
        res.counts.update({k: round(e.report.hota, 6) for k, e in evals.items()})

    steps = (s_import, s_reid, s_match, s_triangulate, s_analyze, s_evaluate)
    for name, fn in zip(STAGES, steps):
        if not stage(name, fn):
            break
    failed = next((s for s in stages if s.status == "failed"), None)
    return {
        "video_id": job.video_id,
        "inputs": job.to_dict(),
        "sha256": {k: sha256(p) for k, p in sorted(job.inputs().items())},
        "status": "failed" if failed else "ok",
        "stages": [asdict(s) for s in stages],
        "evals": {k: e.report for k, e in state.get("evals", {}).items()},
        "margins": {k: e.margins for k, e in state.get("evals", {}).items()},
        "id_rows": state.get("id_rows", []),
    }


def stereo_match_accuracy(state: dict, truth_table) -> tuple[int, int, float]:
    """Consensus pairs judged against ground-truth pairs through the id mappings.

    A predicted pair counts as correct when both of its ids map to ground-truth
    ids that are paired in ``truth_table``.
    """
    evals = state.get("evals", {})
    truth = {m.left_id: m.right_id for m in truth_table}
    maps = list(evals.values())
    if len(maps) != 2:
        return (0, 0, 0.0)
    lmap, rmap = maps[0].mapping.pairs, maps[1].mapping.pairs
    correct = sum(
        1
        for m in state["matches"]
        if m.left_id in lmap and m.right_id in rmap and truth.get(lmap[m.left_id]) == rmap[m.right_id]
    )
    total = len(truth)
    return (correct, total, correct / total if total else 0.0)


def _versions() -> dict[str, str]:
    return {"stereotrack": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_pipeline(jobs: list[PairJob], run_dir: str | Path, cfg: PipelineConfig | None = None,
                 workers: int = 1) -> dict:
    """Run every pair (concurrently when ``workers > 1``) and write the manifest."""
    cfg = cfg or PipelineConfig()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in [run_dir / FAILED_MARKER, *run_dir.glob(f"*/{FAILED_MARKER}")]:
        stale.unlink(missing_ok=True)
    ids = [j.video_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate video ids in run: {ids}")
    created = _now()
    (run_dir / "config.txt").write_text(format_config(cfg))
    jobs = sorted(jobs, key=lambda j: j.video_id)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_pair, jobs, [run_dir] * len(jobs), [cfg] * len(jobs)))
    else:
        results = [run_pair(j, run_dir, cfg) for j in jobs]

    ok = [r for r in results if r["status"] == "ok" and r["evals"]]
    if ok:
        (run_dir / "metrics.csv").write_text(
            format_metric_table([(k, v) for r in ok for k, v in r["evals"].items()]))
        (run_dir / "margins.csv").write_text(
            format_margin_table([(k, v) for r in ok for k, v in r["margins"].items()]))
        (run_dir / "id_counts.csv").write_text(_id_counts([row for r in ok for row in r["id_rows"]]))
    failed = [r for r in results if r["status"] == "failed"]
    manifest = {
        "tool": "stereotrack",
        "created_at": created,
        "finished_at": _now(),
        "status": "failed" if failed else "ok",
        "versions": _versions(),
        "config": cfg.to_dict(),
        "pairs": [{k: v for k, v in r.items() if k not in ("evals", "margins", "id_rows")} for r in results],
    }
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    if failed:
        lines = []
        for r in failed:
            st = next(s for s in r["stages"] if s["status"] == "failed")
            lines.append(f"{r['video_id']}\t{st['name']}\t{st['error']}")
        (run_dir / FAILED_MARKER).write_text("\n".join(lines) + "\n")
    return manifest


def failure_kind(manifest: dict) -> str | None:
    """``"numerical"`` or ``"data"`` for the first failed stage, else ``None``."""
    for pair in manifest["pairs"]:
        for st in pair["stages"]:
            if st["status"] == "failed":
                numeric = ("NumericalError", "ConvergenceError", "DegenerateGeometryError", "PointAtInfinityError",
                           "ArithmeticError", "FloatingPointError", "ZeroDivisionError", "OverflowError")
                return "numerical" if st["error"].split(":", 1)[0] in numeric else "data"
    return None


def load_manifest(path: str | Path, verify: bool = True) -> tuple[list[PairJob], PipelineConfig]:
    """Jobs and config from a manifest; inputs must still hash to the recorded values."""
    doc = json.loads(Path(path).read_text())
    try:
        cfg = config_from_dict(doc["config"])
        jobs = [PairJob.from_dict(p["inputs"]) for p in doc["pairs"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from None
    if verify:
        for job, pair in zip(jobs, doc["pairs"]):
            for name, digest in pair.get("sha256", {}).items():
                p = job.inputs().get(name)
                if p is None or not p.is_file() or sha256(p) != digest:
                    raise DataError(f"input {name} of {job.video_id} is missing or changed since the manifest")
    return jobs, cfg
