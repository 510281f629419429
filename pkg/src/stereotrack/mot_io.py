"""Track and calibration file formats.

Every file the pipeline reads or writes goes through this module:

* raw MOT ground truth (``frame, id, x_tl, y_tl, w, h, ...``, no header),
* the headered ``_clean.txt`` form (``frame,id,cx,cy,x_off,y_off``),
* tracker output with corner boxes (``frame, id, xmin, ymin, xmax, ymax[, conf, class]``),
* YOLO label files plus ``data.yaml``,
* the plain-text stereo calibration file.

Internally a box is always stored as a center plus half extents.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, MotFormatError

CLEAN_HEADER = "frame,id,cx,cy,x_off,y_off"
CLEAN_SUFFIX = "_clean.txt"
TRACKER_HEADER = "frame,id,xmin,ymin,xmax,ymax,conf,class"
VIEWS = ("left", "right", "mono")
DEFAULT_IMAGE_SIZE = (1920, 1080)

# data.yaml in the layout the YOLO trainer reads.
DATA_YAML = (
    "train: images/train  # train images (relative to 'path')\n"
    "val: images/val  # val images (relative to 'path')\n"
    "nc: 1  # Number of classes (just fish)\n"
    "names: ['fish']  # Your class names\n"
)

CALIBRATION_KEYS = (
    "distortionCoefficients1",
    "distortionCoefficients2",
    "intrinsicMatrix1",
    "intrinsicMatrix2",
    "rotationOfCamera2",
    "translationOfCamera2",
)

_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True, order=True)
class TrackRecord:
    """One detection: frame, track id, box center and half extents (pixels)."""

    frame: int
    id: int
    cx: float
    cy: float
    x_off: float
    y_off: float
    conf: float | None = field(default=None, compare=False)

    @classmethod
    def from_tlwh(cls, frame: int, id: int, x_tl: float, y_tl: float, w: float, h: float) -> TrackRecord:
        return cls(frame, id, x_tl + w / 2, y_tl + h / 2, w / 2, h / 2)

    @classmethod
    def from_corners(
        cls,
        frame: int,
        id: int,
        xmin: float,
        ymin: float,
        xmax: float,
        ymax: float,
        conf: float | None = None,
    ) -> TrackRecord:
        cx = (xmin + xmax) / 2
        cy = (ymin + ymax) / 2
        return cls(frame, id, cx, cy, abs(cx - xmin), abs(cy - ymin), conf)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.x_off, self.cy - self.y_off, self.cx + self.x_off, self.cy + self.y_off)

    def with_id(self, new_id: int) -> TrackRecord:
        return replace(self, id=new_id)


@dataclass
class TrackSet:
    """All records of one video as seen by one camera.

    Records are kept sorted by ``(frame, id)``. ``frame_count`` is the length
    of the video; when unknown it falls back to the last observed frame.
    """

    records: list[TrackRecord]
    video_id: str = ""
    view: str = "mono"
    frame_count: int | None = None
    image_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}, got {self.view!r}")
        self.records = sorted(self.records)
        seen = set()
        for r in self.records:
            key = (r.frame, r.id)
            if key in seen:
                raise MotFormatError(f"duplicate record for frame {r.frame}, id {r.id}")
            seen.add(key)
        if self.frame_count is not None and self.records and self.records[-1].frame > self.frame_count:
            raise MotFormatError(
                f"record at frame {self.records[-1].frame} exceeds frame_count {self.frame_count}"
            )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_frames(self) -> int:
        if self.frame_count is not None:
            return self.frame_count
        return self.records[-1].frame if self.records else 0

    def ids(self) -> list[int]:
        return sorted({r.id for r in self.records})

    def frames(self) -> list[int]:
        return sorted({r.frame for r in self.records})

    def by_id(self) -> dict[int, list[TrackRecord]]:
        out: dict[int, list[TrackRecord]] = defaultdict(list)
        for r in self.records:
            out[r.id].append(r)
        return dict(sorted(out.items()))

    def by_frame(self) -> dict[int, list[TrackRecord]]:
        out: dict[int, list[TrackRecord]] = defaultdict(list)
        for r in self.records:
            out[r.frame].append(r)
        return dict(out)

    def with_records(self, records: Iterable[TrackRecord]) -> TrackSet:
        return TrackSet(list(records), self.video_id, self.view, self.frame_count, self.image_size)


def view_from_name(name: str) -> str:
    """Infer the camera from the ``_1``/``_2`` naming convention of the dataset."""
    stem = Path(name).name
    m = re.match(r"^(.*?)_([12])(?:_|\.|$)", stem)
    if m is None:
        return "mono"
    return "left" if m.group(2) == "1" else "right"


def video_id_from_name(name: str) -> str:
    stem = Path(name).name
    m = re.match(r"^(.*?)_[12](?:_|\.|$)", stem)
    if m is not None:
        return m.group(1)
    return stem.split(".")[0]


def _numeric_rows(text: str, min_cols: int) -> Iterable[tuple[int, list[float]]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        if len(parts) < min_cols:
            raise MotFormatError(f"expected at least {min_cols} columns, got {len(parts)}", lineno)
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise MotFormatError(f"non-numeric value in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in values[:min_cols]):
            raise MotFormatError("non-finite value", lineno)
        yield lineno, values


def _as_int(value: float, what: str, lineno: int, minimum: int) -> int:
    if value != int(value):
        raise MotFormatError(f"{what} must be an integer, got {value}", lineno)
    if value < minimum:
        raise MotFormatError(f"{what} must be >= {minimum}, got {int(value)}", lineno)
    return int(value)


def _build(records: list[tuple[int, TrackRecord]], **meta) -> TrackSet:
    seen: dict[tuple[int, int], int] = {}
    for lineno, r in records:
        key = (r.frame, r.id)
        if key in seen:
            raise MotFormatError(
                f"duplicate record for frame {r.frame}, id {r.id} (first seen on line {seen[key]})", lineno
            )
        seen[key] = lineno
    return TrackSet([r for _, r in records], **meta)


def parse_mot(
    text: str,
    *,
    video_id: str = "",
    view: str = "mono",
    frame_count: int | None = None,
    image_size: tuple[int, int] | None = None,
) -> TrackSet:
    """Parse a raw MOT file (top-left box form). Columns past the sixth are dropped."""
    records = []
    for lineno, v in _numeric_rows(text, 6):
        frame = _as_int(v[0], "frame", lineno, 1)
        tid = _as_int(v[1], "id", lineno, 0)
        x_tl, y_tl, w, h = v[2:6]
        if w <= 0 or h <= 0:
            raise MotFormatError(f"box width and height must be positive, got {w}x{h}", lineno)
        records.append((lineno, TrackRecord.from_tlwh(frame, tid, x_tl, y_tl, w, h)))
    return _build(records, video_id=video_id, view=view, frame_count=frame_count, image_size=image_size)


def _fmt(value: float) -> str:
    # Shortest repr that round-trips; integral floats are written without ".0".
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def format_clean(tracks: TrackSet) -> str:
    lines = [CLEAN_HEADER]
    for r in tracks.records:
        lines.append(f"{r.frame},{r.id},{_fmt(r.cx)},{_fmt(r.cy)},{_fmt(r.x_off)},{_fmt(r.y_off)}")
    return "\n".join(lines) + "\n"


def parse_clean(
    text: str,
    *,
    video_id: str = "",
    view: str = "mono",
    frame_count: int | None = None,
    image_size: tuple[int, int] | None = None,
) -> TrackSet:
    lines = text.splitlines()
    first = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if first is None or lines[first].strip().replace(" ", "") != CLEAN_HEADER:
        raise MotFormatError(f"missing header {CLEAN_HEADER!r}", (first or 0) + 1)
    body = "\n".join([""] * (first + 1) + lines[first + 1 :])
    records = []
    for lineno, v in _numeric_rows(body, 6):
        frame = _as_int(v[0], "frame", lineno, 1)
        tid = _as_int(v[1], "id", lineno, 0)
        cx, cy, x_off, y_off = v[2:6]
        if x_off <= 0 or y_off <= 0:
            raise MotFormatError(f"offsets must be positive, got {x_off}, {y_off}", lineno)
        records.append((lineno, TrackRecord(frame, tid, cx, cy, x_off, y_off)))
    return _build(records, video_id=video_id, view=view, frame_count=frame_count, image_size=image_size)


def clean_tracks(raw: TrackSet) -> tuple[TrackSet, str]:
    """Return the cleaned track set together with its ``_clean.txt`` serialization."""
    cleaned = raw.with_records(TrackRecord(r.frame, r.id, r.cx, r.cy, r.x_off, r.y_off) for r in raw.records)
    return cleaned, format_clean(cleaned)


def clean_path_for(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + CLEAN_SUFFIX)


def clean_file(path: str | Path, out_path: str | Path | None = None) -> Path:
    path = Path(path)
    raw = parse_mot(path.read_text(), video_id=video_id_from_name(path.name), view=view_from_name(path.name))
    _, text = clean_tracks(raw)
    out = Path(out_path) if out_path is not None else clean_path_for(path)
    out.write_text(text)
    return out


def export_yolo_labels(tracks: TrackSet, out_dir: str | Path, normalize: bool = True) -> list[Path]:
    """Write ``frame_<n>.txt`` for every frame of the video plus ``data.yaml``.

    Rows are ``0 cx cy w h``. With ``normalize`` the values are divided by the
    image width/height, as YOLO training expects; otherwise pixels are kept.
    """
    if tracks.image_size is None:
        raise MotFormatError("image_size is required to export YOLO labels")
    width, height = tracks.image_size
    sx, sy = (1.0 / width, 1.0 / height) if normalize else (1.0, 1.0)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_frame = tracks.by_frame()
    written = []
    for frame in range(1, tracks.n_frames + 1):
        rows = [
            f"0 {r.cx * sx:.6f} {r.cy * sy:.6f} {2 * r.x_off * sx:.6f} {2 * r.y_off * sy:.6f}"
            for r in per_frame.get(frame, [])
        ]
        p = out_dir / f"frame_{frame}.txt"
        p.write_text("".join(row + "\n" for row in rows))
        written.append(p)
    (out_dir / "data.yaml").write_text(DATA_YAML)
    return written


_TRACKER_ALIASES = {
    "frame": ("frame", "frame_id", "frameid"),
    "id": ("id", "track_id", "trackid", "track", "tracker_id"),
    "xmin": ("xmin", "x_min", "x1"),
    "ymin": ("ymin", "y_min", "y1"),
    "xmax": ("xmax", "x_max", "x2"),
    "ymax": ("ymax", "y_max", "y2"),
    "conf": ("conf", "confidence", "score"),
    "class": ("class", "cls", "class_id", "label"),
}


def _tracker_columns(header: list[str]) -> dict[str, int]:
    names = [h.strip().lower() for h in header]
    cols: dict[str, int] = {}
    for key, aliases in _TRACKER_ALIASES.items():
        for i, name in enumerate(names):
            if name in aliases:
                cols[key] = i
                break
    missing = [k for k in ("frame", "id", "xmin", "ymin", "xmax", "ymax") if k not in cols]
    if missing:
        raise MotFormatError(f"tracker output header lacks columns {missing}", 1)
    return cols


def parse_tracker_output(
    text: str,
    *,
    video_id: str = "",
    view: str = "mono",
    frame_count: int | None = None,
    image_size: tuple[int, int] | None = None,
) -> TrackSet:
    """Parse corner-box tracker output. A header row is optional.

    Without a header the columns are positional: frame, id, xmin, ymin, xmax,
    ymax, then optional confidence and class. A pandas-style leading index
    column (empty first header field) is skipped.
    """
    lines = text.splitlines()
    cols = {"frame": 0, "id": 1, "xmin": 2, "ymin": 3, "xmax": 4, "ymax": 5, "conf": 6}
    start = 0
    first = next((i for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")), None)
    if first is not None:
        fields = [f for f in re.split(r",|\s+", lines[first].strip())]
        try:
            [float(f) for f in fields if f]
        except ValueError:
            cols = _tracker_columns(fields)
            start = first + 1
    records = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = re.split(r",|\s+", line.strip())
        try:
            v = {k: float(parts[i]) for k, i in cols.items() if i < len(parts) and parts[i] != ""}
        except ValueError:
            raise MotFormatError(f"non-numeric value in {line!r}", lineno) from None
        if any(k not in v for k in ("frame", "id", "xmin", "ymin", "xmax", "ymax")):
            raise MotFormatError("expected at least 6 columns", lineno)
        frame = _as_int(v["frame"], "frame", lineno, 1)
        tid = _as_int(v["id"], "id", lineno, 0)
        if not v["xmax"] > v["xmin"] or not v["ymax"] > v["ymin"]:
            raise MotFormatError(
                f"degenerate box xmin={v['xmin']} xmax={v['xmax']} ymin={v['ymin']} ymax={v['ymax']}", lineno
            )
        rec = TrackRecord.from_corners(frame, tid, v["xmin"], v["ymin"], v["xmax"], v["ymax"], v.get("conf"))
        records.append((lineno, rec))
    return _build(records, video_id=video_id, view=view, frame_count=frame_count, image_size=image_size)


def format_tracker_output(tracks: TrackSet, cls: int = 0) -> str:
    lines = [TRACKER_HEADER]
    for r in tracks.records:
        xmin, ymin, xmax, ymax = r.corners
        conf = 1.0 if r.conf is None else r.conf
        lines.append(f"{r.frame},{r.id},{_fmt(xmin)},{_fmt(ymin)},{_fmt(xmax)},{_fmt(ymax)},{_fmt(conf)},{cls}")
    return "\n".join(lines) + "\n"


def read_tracks(path: str | Path, **meta) -> TrackSet:
    """Load any supported track file, telling formats apart by their header."""
    path = Path(path)
    text = path.read_text()
    meta.setdefault("video_id", video_id_from_name(path.name))
    meta.setdefault("view", view_from_name(path.name))
    head = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    if head.replace(" ", "") == CLEAN_HEADER:
        return parse_clean(text, **meta)
    if re.search(r"[A-Za-z]", head) or path.suffix == ".csv":
        return parse_tracker_output(text, **meta)
    return parse_mot(text, **meta)


@dataclass(eq=False)
class StereoRig:
    """Camera models plus relative pose of a two-camera rig.

    ``R`` and ``t`` map camera-1 coordinates into camera-2 coordinates:
    ``X2 = R @ X1 + t``. Translation keeps the calibration's length unit
    (assumed millimeters).
    """

    K1: np.ndarray
    K2: np.ndarray
    dist1: np.ndarray
    dist2: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        self.K1 = _check_intrinsics(self.K1, "intrinsicMatrix1")
        self.K2 = _check_intrinsics(self.K2, "intrinsicMatrix2")
        self.dist1 = _check_distortion(self.dist1, "distortionCoefficients1")
        self.dist2 = _check_distortion(self.dist2, "distortionCoefficients2")
        self.R = _check_rotation(self.R)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise CalibrationError("translationOfCamera2 must be 3 finite values")
        if not np.any(t):
            raise CalibrationError("translationOfCamera2 must be nonzero")
        self.t = t

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StereoRig):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("K1", "K2", "dist1", "dist2", "R", "t")
        )

    @property
    def camera2_center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.t))


def _check_intrinsics(K, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.size != 9:
        raise CalibrationError(f"{name} must have 9 entries, got {K.size}")
    K = K.reshape(3, 3)
    if not np.all(np.isfinite(K)):
        raise CalibrationError(f"{name} has non-finite entries")
    diag = np.diag(K)
    if np.any(diag <= 0):
        raise CalibrationError(f"{name} is singular or has a non-positive diagonal: {diag}")
    scale = np.abs(K).max()
    if np.abs(np.tril(K, -1)).max() > 1e-12 * scale:
        hint = " (it looks transposed)" if np.abs(np.triu(K, 1)).max() <= 1e-12 * scale else ""
        raise CalibrationError(f"{name} must be upper-triangular{hint}")
    return K


def _check_distortion(d, name: str) -> np.ndarray:
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size not in (4, 5):
        raise CalibrationError(f"{name} must hold 4 or 5 coefficients (k1 k2 p1 p2 [k3]), got {d.size}")
    if not np.all(np.isfinite(d)):
        raise CalibrationError(f"{name} has non-finite entries")
    return d


def _check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.size != 9:
        raise CalibrationError(f"rotationOfCamera2 must have 9 entries, got {R.size}")
    R = R.reshape(3, 3)
    err = np.linalg.norm(R.T @ R - np.eye(3), ord=np.inf)
    if not err <= 1e-9:
        raise CalibrationError(f"rotationOfCamera2 is not orthonormal (|R^T R - I| = {err:.3g})")
    if np.linalg.det(R) < 0:
        raise CalibrationError("rotationOfCamera2 is a reflection (det = -1)")
    return R


def load_calibration(text: str) -> StereoRig:
    """Parse the key-value calibration text.

    One entry per line, ``key = values``. Values may be separated by spaces,
    commas or semicolons and brackets are ignored, so ``1 0 0; 0 1 0; 0 0 1``
    and ``[[1,0,0],[0,1,0],[0,0,1]]`` are both accepted. Matrices are
    row-major in the column-vector convention (K upper-triangular).
    """
    entries: dict[str, list[float]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z0-9_]+)\s*[=:]\s*(.*)$", line)
        if m is None:
            raise CalibrationError(f"line {lineno}: expected 'key = values'")
        key, raw = m.groups()
        tokens = [tok for tok in re.split(r"[,;\s\[\]()]+", raw) if tok]
        try:
            entries[key] = [float(tok) for tok in tokens]
        except ValueError:
            raise CalibrationError(f"line {lineno}: non-numeric value for {key}") from None
    missing = [k for k in CALIBRATION_KEYS if k not in entries]
    if missing:
        raise CalibrationError(f"calibration is missing {', '.join(missing)}")
    return StereoRig(
        K1=np.array(entries["intrinsicMatrix1"]),
        K2=np.array(entries["intrinsicMatrix2"]),
        dist1=np.array(entries["distortionCoefficients1"]),
        dist2=np.array(entries["distortionCoefficients2"]),
        R=np.array(entries["rotationOfCamera2"]),
        t=np.array(entries["translationOfCamera2"]),
    )


def _fmt_matrix(m: np.ndarray) -> str:
    m = np.atleast_2d(m)
    return "; ".join(" ".join(repr(float(v)) for v in row) for row in m)


def dump_calibration(rig: StereoRig) -> str:
    return (
        "# stereo calibration: X2 = R @ X1 + t, matrices row-major\n"
        f"intrinsicMatrix1 = {_fmt_matrix(rig.K1)}\n"
        f"intrinsicMatrix2 = {_fmt_matrix(rig.K2)}\n"
        f"distortionCoefficients1 = {_fmt_matrix(rig.dist1)}\n"
        f"distortionCoefficients2 = {_fmt_matrix(rig.dist2)}\n"
        f"rotationOfCamera2 = {_fmt_matrix(rig.R)}\n"
        f"translationOfCamera2 = {_fmt_matrix(rig.t)}\n"
    )


def read_calibration(path: str | Path) -> StereoRig:
    return load_calibration(Path(path).read_text())


def records_array(records: Sequence[TrackRecord]) -> np.ndarray:
    """``(N, 6)`` float array of frame, id, cx, cy, x_off, y_off."""
    if not records:
        return np.zeros((0, 6))
    return np.array([(r.frame, r.id, r.cx, r.cy, r.x_off, r.y_off) for r in records], dtype=float)
