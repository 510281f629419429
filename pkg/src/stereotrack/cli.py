"""``stereotrack`` command line.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, format_config, read_config
from .errors import ConfigError, DataError, NumericalError
from .kinematics import write_analysis
from .metrics import completeness_json, evaluate, format_margin_table, format_metric_table
from .mot_io import (
    TrackSet,
    clean_file,
    export_yolo_labels,
    format_clean,
    read_calibration,
    read_tracks,
)
from .reid import reidentify
from .stereo import consensus, format_consensus, format_frame_matches, match_tracks, parse_match_table
from .triangulate import format_tracks3d, parse_tracks3d, triangulate_tracks

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("stereotrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default, which means "data error" here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cfg(args) -> PipelineConfig:
    cfg = read_config(args.config)
    overrides = {}
    for name in ("fps", "match_threshold", "match_one_to_one"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "no_svg", False):
        overrides["svg"] = False
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _load(path: str, cfg: PipelineConfig, frame_count: int | None = None, view: str | None = None) -> TrackSet:
    meta = {"image_size": cfg.image_size, "frame_count": frame_count}
    if view:
        meta["view"] = view
    return read_tracks(path, **meta)


def _out(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_clean(args) -> None:
    out = clean_file(args.input, args.output)
    print(out)


def cmd_export_yolo(args) -> None:
    cfg = _cfg(args)
    tracks = _load(args.input, cfg, args.frame_count)
    paths = export_yolo_labels(tracks, args.output, normalize=cfg.yolo_normalize and not args.pixels)
    print(f"wrote {len(paths)} files to {args.output}")


def cmd_import_tracks(args) -> None:
    cfg = _cfg(args)
    _out(args.output, format_clean(_load(args.input, cfg, args.frame_count)))


def cmd_reid(args) -> None:
    cfg = _cfg(args)
    tracks = _load(args.input, cfg, args.frame_count)
    after, report = reidentify(tracks, cfg.reid())
    _out(args.output, format_clean(after))
    if args.report:
        _out(args.report, json.dumps(report.to_dict(), indent=1) + "\n")
    print(f"ids: {report.ids_before} -> {report.ids_after}", file=sys.stderr)


def cmd_match(args) -> None:
    cfg = _cfg(args)
    rig = read_calibration(args.calib)
    per_frame = match_tracks(_load(args.left, cfg, view="left"), _load(args.right, cfg, view="right"), rig,
                             cfg.match_threshold, cfg.match_one_to_one)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "frame_matches.csv").write_text(format_frame_matches(per_frame))
    (out / "consensus.csv").write_text(format_consensus(consensus(per_frame)))


def cmd_triangulate(args) -> None:
    cfg = _cfg(args)
    rig = read_calibration(args.calib)
    matches = parse_match_table(Path(args.matches).read_text())
    t3d = triangulate_tracks(_load(args.left, cfg, view="left"), _load(args.right, cfg, view="right"), matches,
                             rig, cfg.fps)
    _out(args.output, format_tracks3d(t3d))
    if t3d.failures:
        print(f"{len(t3d.failures)} points could not be triangulated", file=sys.stderr)


def cmd_evaluate(args) -> None:
    cfg = _cfg(args)
    ecfg = cfg.evaluation()
    pairs = args.pair or []
    if args.gt and args.pred:
        pairs.append([args.gt, args.pred])
    if not pairs:
        raise UsageError("evaluate needs --gt/--pred or at least one --pair GT PRED")
    evals = {}
    for gt_path, pred_path in pairs:
        gt = _load(gt_path, cfg)
        pred = _load(pred_path, cfg, frame_count=gt.frame_count)
        name = Path(gt_path).name.split("_clean")[0].rsplit(".", 1)[0]
        if name in evals:
            raise UsageError(f"duplicate evaluation name {name!r}")
        evals[name] = evaluate(gt, pred, ecfg, name)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(format_metric_table([(k, e.report) for k, e in evals.items()]))
    (out / "margins.csv").write_text(format_margin_table([(k, e.margins) for k, e in evals.items()]))
    frames_json, counts_json = completeness_json({k: e.completeness for k, e in evals.items()})
    (out / "completeness_frames.json").write_text(frames_json)
    (out / "completeness_counts.json").write_text(counts_json)
    sys.stdout.write((out / "metrics.csv").read_text())


def cmd_analyze(args) -> None:
    cfg = _cfg(args)
    text = Path(args.input).read_text()
    if text.lstrip().startswith("frame,left_id"):
        tracks = parse_tracks3d(text, fps=cfg.fps)
    else:
        tracks = _load(args.input, cfg)
    write_analysis(tracks, args.output, cfg.fps, cfg.density_bins, cfg.temporal_window, cfg.svg)


def _fragment(value: str):
    from .synth import Fragment

    parts = value.split(":")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("fragment is FISH:VIEW:FRAME[:GAP]")
    return Fragment(int(parts[0]), parts[1], int(parts[2]), int(parts[3]) if len(parts) == 4 else 0)


def _dropout(value: str):
    from .synth import Dropout

    parts = value.split(":")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("dropout is FISH:VIEW:START:END")
    return Dropout(int(parts[0]), parts[1], int(parts[2]), int(parts[3]))


def cmd_synth(args) -> None:
    from . import synth

    cfg = synth.SceneConfig(
        n_fish=args.n_fish,
        n_frames=args.n_frames,
        model=args.model,
        noise_px=args.noise_px,
        fragmentation=args.fragment or [],
        dropout=args.dropout or [],
        blips=args.blips,
        seed=args.seed,
        min_separation_px=args.min_separation,
        video_id=args.video_id,
    )
    truth = synth.generate(cfg)
    degraded = synth.degrade(truth)
    paths = synth.write_scene(truth, degraded, args.output)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")


def cmd_pipeline(args) -> int:
    from .pipeline import PairJob, discover_pairs, failure_kind, load_manifest, run_pipeline

    if args.from_manifest:
        jobs, cfg = load_manifest(args.from_manifest)
    else:
        cfg = _cfg(args)
        if args.scene:
            jobs = discover_pairs(args.scene)
        elif args.left and args.right and args.calib:
            vid = args.video_id or Path(args.left).name.split("_1")[0]
            opt = {k: Path(getattr(args, k)) if getattr(args, k) else None
                   for k in ("gt_left", "gt_right", "gt_matches", "matches")}
            jobs = [PairJob(vid, Path(args.left), Path(args.right), Path(args.calib), frame_count=args.frame_count,
                            **opt)]
        else:
            raise UsageError("pipeline needs --scene DIR, --from-manifest FILE, or --left/--right/--calib")
    manifest = run_pipeline(jobs, args.output, cfg, workers=args.workers)
    kind = failure_kind(manifest)
    if kind is not None:
        print(Path(args.output, "FAILED").read_text(), file=sys.stderr, end="")
        return EXIT_NUMERIC if kind == "numerical" else EXIT_DATA
    print(f"run written to {args.output}")
    return EXIT_OK


def cmd_config(args) -> None:
    _out(args.output, format_config(read_config(args.config)))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stereotrack", description="Stereo multi-fish tracking post-processing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn, help: str, config: bool = True) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="key = value config file overriding defaults")
        return sp

    sp = add("clean", cmd_clean, "convert a MOT ground-truth file into the center/half-extent format", config=False)
    sp.add_argument("input")
    sp.add_argument("-o", "--output", help="default: <input stem>_clean.txt next to the input")

    sp = add("export-yolo", cmd_export_yolo, "write YOLO label files and data.yaml")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True, help="label directory")
    sp.add_argument("--pixels", action="store_true", help="write pixel units instead of normalized")
    sp.add_argument("--frame-count", type=int)

    sp = add("import-tracks", cmd_import_tracks, "convert tracker output to the clean format")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--frame-count", type=int)

    sp = add("reid", cmd_reid, "merge fragmented ids and drop short tracks")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--report", help="JSON merge report path")
    sp.add_argument("--frame-count", type=int)

    sp = add("match", cmd_match, "per-frame epipolar matching and consensus pairing")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--calib", required=True)
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--threshold", dest="match_threshold", type=float)
    sp.add_argument("--one-to-one", dest="match_one_to_one", choices=("none", "greedy", "optimal"))

    sp = add("triangulate", cmd_triangulate, "3D positions for matched track pairs")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--calib", required=True)
    sp.add_argument("--matches", required=True, help="consensus or hand-made left_id,right_id table")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--fps", type=float)

    sp = add("evaluate", cmd_evaluate, "tracking metrics plus per-id completeness reports")
    sp.add_argument("--gt")
    sp.add_argument("--pred")
    sp.add_argument("--pair", nargs=2, action="append", metavar=("GT", "PRED"))
    sp.add_argument("-o", "--output", required=True, help="output directory")

    sp = add("analyze", cmd_analyze, "motion analytics such as speed and density")
    sp.add_argument("input", help="clean 2D track file or 3D track CSV")
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.add_argument("--fps", type=float)
    sp.add_argument("--no-svg", action="store_true")

    sp = add("synth", cmd_synth, "generate a synthetic stereo scene directory", config=False)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-fish", type=int, default=9)
    sp.add_argument("--n-frames", type=int, default=260)
    sp.add_argument("--model", choices=("linear", "helical", "random_walk"), default="linear")
    sp.add_argument("--noise-px", type=float, default=0.0)
    sp.add_argument("--blips", type=int, default=0)
    sp.add_argument("--min-separation", type=float, default=0.0, help="pixels between any two fish")
    sp.add_argument("--fragment", type=_fragment, action="append", help="FISH:VIEW:FRAME[:GAP]")
    sp.add_argument("--dropout", type=_dropout, action="append", help="FISH:VIEW:START:END")
    sp.add_argument("--video-id", default="synth")

    sp = add("pipeline", cmd_pipeline, "run every stage for one or more stereo pairs")
    sp.add_argument("-o", "--output", required=True, help="run directory")
    sp.add_argument("--scene", help="directory with <vid>_1/<vid>_2 track files")
    sp.add_argument("--from-manifest", help="replay the run described by a manifest.json")
    sp.add_argument("--left")
    sp.add_argument("--right")
    sp.add_argument("--calib")
    sp.add_argument("--gt-left")
    sp.add_argument("--gt-right")
    sp.add_argument("--gt-matches")
    sp.add_argument("--matches", help="hand-made pairing used instead of the consensus")
    sp.add_argument("--video-id")
    sp.add_argument("--frame-count", type=int)
    sp.add_argument("--workers", type=int, default=1)

    sp = add("config", cmd_config, "print the resolved configuration")
    sp.add_argument("-o", "--output", default="-")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        rc = args.func(args)
    except UsageError as exc:
        print(f"stereotrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"stereotrack: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError) as exc:
        print(f"stereotrack: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"stereotrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
