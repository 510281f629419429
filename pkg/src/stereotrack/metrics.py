"""Tracking evaluation: id mapping, CLEAR-MOT counts, IDF1, HOTA and the
two-tier margin and completeness reports.

Detections are compared by center distance by default. The matching radius
is half the average ground-truth box size (mean of ``(w + h) / 2``) unless
given explicitly; IoU matching is available through ``EvalConfig.mode``.
Similarity of a matched pair is ``1 - distance / radius`` (or the IoU), and
that similarity drives the HOTA thresholds and localization term.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError
from .mot_io import TrackSet

DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
MISSING_MATCH = "Missing match"


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "center"
    dist_threshold: float | None = None
    iou_threshold: float = 0.5
    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def __post_init__(self) -> None:
        if self.mode not in ("center", "iou"):
            raise ValueError("EvalConfig.mode must be 'center' or 'iou'")
        if self.dist_threshold is not None and not self.dist_threshold > 0:
            raise ValueError("dist_threshold must be positive")
        if not self.alphas or not all(0 < a < 1 for a in self.alphas):
            raise ValueError("alphas must be a nonempty list of values in (0, 1)")

    def radius(self, gt: TrackSet) -> float:
        return self.dist_threshold if self.dist_threshold is not None else 0.5 * average_box_size(gt)


@dataclass
class IdMapping:
    pairs: dict[int, int]
    unmatched_pred: set[int] = field(default_factory=set)
    unmatched_gt: set[int] = field(default_factory=set)

    @property
    def gt_to_pred(self) -> dict[int, int]:
        return {g: p for p, g in self.pairs.items()}


@dataclass
class ConfusionCounts:
    frames: list[int]
    tp: list[int]
    fp: list[int]
    fn: list[int]
    idsw: list[int]
    gt: list[int]

    @property
    def total_tp(self) -> int:
        return sum(self.tp)

    @property
    def total_fp(self) -> int:
        return sum(self.fp)

    @property
    def total_fn(self) -> int:
        return sum(self.fn)

    @property
    def total_idsw(self) -> int:
        return sum(self.idsw)

    @property
    def total_gt(self) -> int:
        return sum(self.gt)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    undefined: bool = False


@dataclass(frozen=True)
class IdScores:
    idf1: float
    idp: float
    idr: float
    idtp: int
    idfp: int
    idfn: int


@dataclass(frozen=True)
class AlphaScores:
    alpha: float
    da: float
    aa: float
    la: float
    tp: int
    fn: int
    fp: int


@dataclass(frozen=True)
class HotaResult:
    hota: float
    deta: float
    assa: float
    loca: float
    per_alpha: tuple[AlphaScores, ...]
    no_true_positives: bool = False


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    hota: float
    mota: float
    assa: float
    deta: float
    idf1: float
    loca: float = 0.0


@dataclass(frozen=True)
class MarginReport:
    within_margin: float
    not_within_margin: float
    not_identified: float
    false_positive: float


@dataclass
class CompletenessReport:
    """Per ground-truth id: ``None`` when no prediction maps to it, else the missed frames."""

    missing: dict[int, list[int] | None]

    def counts(self) -> dict[str, int | str]:
        return {str(g): MISSING_MATCH if f is None else len(f) for g, f in sorted(self.missing.items())}

    def frame_lists(self) -> dict[str, list[int] | str]:
        return {str(g): MISSING_MATCH if f is None else list(f) for g, f in sorted(self.missing.items())}


def average_box_size(tracks: TrackSet) -> float:
    """Mean of ``(w + h) / 2`` over all records, i.e. mean of ``x_off + y_off``."""
    if not tracks.records:
        raise DataError("cannot average box size of an empty track set")
    return float(np.mean([r.x_off + r.y_off for r in tracks.records]))


class _FrameData:
    """Ground truth and predictions grouped per frame as id lists and box arrays."""

    def __init__(self, gt: TrackSet, pred: TrackSet) -> None:
        g = gt.by_frame()
        p = pred.by_frame()
        self.frames = sorted(set(g) | set(p))
        self.gt_ids: dict[int, list[int]] = {}
        self.pred_ids: dict[int, list[int]] = {}
        self.gt_boxes: dict[int, np.ndarray] = {}
        self.pred_boxes: dict[int, np.ndarray] = {}
        for f in self.frames:
            gr, pr = g.get(f, []), p.get(f, [])
            self.gt_ids[f] = [r.id for r in gr]
            self.pred_ids[f] = [r.id for r in pr]
            self.gt_boxes[f] = np.array([(r.cx, r.cy, r.x_off, r.y_off) for r in gr], dtype=float).reshape(-1, 4)
            self.pred_boxes[f] = np.array([(r.cx, r.cy, r.x_off, r.y_off) for r in pr], dtype=float).reshape(-1, 4)


def _iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax0, ay0, ax1, ay1 = a[:, 0] - a[:, 2], a[:, 1] - a[:, 3], a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx0, by0, bx1, by1 = b[:, 0] - b[:, 2], b[:, 1] - b[:, 3], b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.clip(np.minimum(ax1[:, None], bx1[None]) - np.maximum(ax0[:, None], bx0[None]), 0, None)
    ih = np.clip(np.minimum(ay1[:, None], by1[None]) - np.maximum(ay0[:, None], by0[None]), 0, None)
    inter = iw * ih
    union = (4 * a[:, 2] * a[:, 3])[:, None] + (4 * b[:, 2] * b[:, 3])[None] - inter
    return inter / union


def pair_scores(gb: np.ndarray, pb: np.ndarray, cfg: EvalConfig, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """``(valid, similarity)`` matrices for ground-truth rows vs prediction columns."""
    if cfg.mode == "iou":
        sim = _iou(gb, pb)
        return sim >= cfg.iou_threshold, sim
    d = np.hypot(gb[:, None, 0] - pb[None, :, 0], gb[:, None, 1] - pb[None, :, 1])
    return d <= radius, np.clip(1.0 - d / radius, 0.0, 1.0)


def _assign(score: np.ndarray) -> list[tuple[int, int]]:
    """Max-score assignment restricted to strictly positive entries."""
    if score.size == 0 or not (score > 0).any():
        return []
    rows, cols = linear_sum_assignment(score, maximize=True)
    return [(i, j) for i, j in zip(rows, cols) if score[i, j] > 0]


def map_ids(gt: TrackSet, pred: TrackSet, dist_threshold: float | None = None, cfg: EvalConfig | None = None) -> IdMapping:
    """Global one-to-one id assignment maximizing co-located frames."""
    cfg = cfg or EvalConfig(dist_threshold=dist_threshold)
    if dist_threshold is not None and cfg.dist_threshold != dist_threshold:
        cfg = EvalConfig(cfg.mode, dist_threshold, cfg.iou_threshold, cfg.alphas)
    gids, pids = gt.ids(), pred.ids()
    gi = {g: i for i, g in enumerate(gids)}
    pj = {p: j for j, p in enumerate(pids)}
    C = np.zeros((len(gids), len(pids)))
    if gids and pids:
        radius = cfg.radius(gt)
        fd = _FrameData(gt, pred)
        for f in fd.frames:
            if not fd.gt_ids[f] or not fd.pred_ids[f]:
                continue
            valid, _ = pair_scores(fd.gt_boxes[f], fd.pred_boxes[f], cfg, radius)
            rows = [gi[g] for g in fd.gt_ids[f]]
            cols = [pj[p] for p in fd.pred_ids[f]]
            C[np.ix_(rows, cols)] += valid
    pairs = {pids[j]: gids[i] for i, j in _assign(C)}
    return IdMapping(pairs, set(pids) - set(pairs), set(gids) - set(pairs.values()))


def frame_confusion(
    gt: TrackSet,
    pred: TrackSet,
    mapping: IdMapping | None = None,
    dist_threshold: float | None = None,
    cfg: EvalConfig | None = None,
) -> ConfusionCounts:
    """Per-frame TP/FP/FN/IDSW.

    Each frame is matched by maximizing, in order: the number of matches,
    the number of ground-truth ids that keep their previous partner (before a
    first match the partner from ``mapping`` is preferred), and the total
    similarity. An id switch is a match whose prediction differs from the
    ground-truth id's last matched prediction.
    """
    cfg = cfg or EvalConfig(dist_threshold=dist_threshold)
    preferred = dict(mapping.gt_to_pred) if mapping is not None else {}
    last: dict[int, int] = {}
    out = ConfusionCounts([], [], [], [], [], [])
    if not gt.records and not pred.records:
        return out
    radius = cfg.radius(gt) if gt.records else (cfg.dist_threshold or 1.0)
    fd = _FrameData(gt, pred)
    for f in fd.frames:
        gids, pids = fd.gt_ids[f], fd.pred_ids[f]
        matches = []
        if gids and pids:
            valid, sim = pair_scores(fd.gt_boxes[f], fd.pred_boxes[f], cfg, radius)
            n = min(len(gids), len(pids))
            w_keep = 2.0 * (n + 1)
            w_match = w_keep * 2.0 * (n + 1)
            keep = np.array(
                [[1.0 if last.get(g, preferred.get(g)) == p else 0.0 for p in pids] for g in gids]
            )
            score = np.where(valid, w_match + w_keep * keep + sim, 0.0)
            matches = _assign(score)
        switches = 0
        for i, j in matches:
            g, p = gids[i], pids[j]
            if g in last and last[g] != p:
                switches += 1
            last[g] = p
        tp = len(matches)
        out.frames.append(f)
        out.tp.append(tp)
        out.fp.append(len(pids) - tp)
        out.fn.append(len(gids) - tp)
        out.idsw.append(switches)
        out.gt.append(len(gids))
    return out


def precision_recall(c: ConfusionCounts) -> PrecisionRecall:
    tp, fp, fn = c.total_tp, c.total_fp, c.total_fn
    undefined = (tp + fp) == 0 or (tp + fn) == 0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return PrecisionRecall(precision, recall, undefined)


def mota(c: ConfusionCounts, gt_total: int | None = None) -> float:
    total = c.total_gt if gt_total is None else gt_total
    if total == 0:
        raise DataError("MOTA is undefined without ground-truth objects")
    return 1.0 - (c.total_fn + c.total_fp + c.total_idsw) / total


def idf1(
    gt: TrackSet,
    pred: TrackSet,
    mapping: IdMapping,
    dist_threshold: float | None = None,
    cfg: EvalConfig | None = None,
) -> IdScores:
    """Identity F1 under the global mapping: 2 IDTP / (2 IDTP + IDFP + IDFN)."""
    if not gt.records and not pred.records:
        raise DataError("IDF1 is undefined for empty inputs")
    cfg = cfg or EvalConfig(dist_threshold=dist_threshold)
    idtp = 0
    if gt.records and pred.records:
        radius = cfg.radius(gt)
        pred_at = {(r.frame, r.id): r for r in pred.records}
        g2p = mapping.gt_to_pred
        for r in gt.records:
            p = g2p.get(r.id)
            pr = pred_at.get((r.frame, p)) if p is not None else None
            if pr is None:
                continue
            valid, _ = pair_scores(
                np.array([[r.cx, r.cy, r.x_off, r.y_off]]), np.array([[pr.cx, pr.cy, pr.x_off, pr.y_off]]), cfg, radius
            )
            idtp += int(valid[0, 0])
    idfp = len(pred.records) - idtp
    idfn = len(gt.records) - idtp
    idp = idtp / (idtp + idfp) if idtp + idfp else 0.0
    idr = idtp / (idtp + idfn) if idtp + idfn else 0.0
    score = 2 * idtp / (2 * idtp + idfp + idfn)
    return IdScores(score, idp, idr, idtp, idfp, idfn)


def hota_suite(
    gt: TrackSet,
    pred: TrackSet,
    thresholds: Sequence[float] = DEFAULT_ALPHAS,
    dist_threshold: float | None = None,
    cfg: EvalConfig | None = None,
) -> HotaResult:
    """Per-threshold components of the higher-order tracking score.

    At threshold ``alpha`` a pair may match when its similarity is at least
    ``alpha``; frames are matched for maximum count, then maximum total
    similarity. A true positive counts as correctly associated when the
    previous true positive of its ground-truth id (if any) had the same
    prediction and the previous true positive of its prediction (if any) had
    the same ground-truth id. HOTA is the cube root of the geometric mean of
    ``DA * AA * LA`` over thresholds; each reported component is a plain mean.
    """
    thresholds = tuple(thresholds)
    if not thresholds:
        raise ValueError("at least one threshold is required")
    cfg = cfg or EvalConfig(dist_threshold=dist_threshold)
    n_gt, n_pred = len(gt.records), len(pred.records)
    if n_gt == 0 and n_pred == 0:
        raise DataError("HOTA is undefined for empty inputs")
    fd = _FrameData(gt, pred)
    radius = cfg.radius(gt) if n_gt else 1.0
    cache = {}
    for f in fd.frames:
        if fd.gt_ids[f] and fd.pred_ids[f]:
            cache[f] = pair_scores(fd.gt_boxes[f], fd.pred_boxes[f], cfg, radius)

    per_alpha = []
    for alpha in thresholds:
        tps: list[tuple[int, int, float]] = []
        for f in fd.frames:
            if f not in cache:
                continue
            valid, sim = cache[f]
            ok = valid & (sim >= alpha) & (sim > 0)
            score = np.where(ok, 1.0 + min(ok.shape) + sim, 0.0)
            for i, j in _assign(score):
                tps.append((fd.gt_ids[f][i], fd.pred_ids[f][j], float(sim[i, j])))
        tp = len(tps)
        fn, fp = n_gt - tp, n_pred - tp
        da = tp / (tp + fn + fp)
        correct = 0
        last_g: dict[int, int] = {}
        last_p: dict[int, int] = {}
        for g, p, _ in tps:
            if last_g.get(g, p) == p and last_p.get(p, g) == g:
                correct += 1
            last_g[g] = p
            last_p[p] = g
        aa = correct / tp if tp else 0.0
        la = float(np.mean([s for _, _, s in tps])) if tp else 0.0
        per_alpha.append(AlphaScores(alpha, da, aa, la, tp, fn, fp))

    no_tp = all(a.tp == 0 for a in per_alpha)
    products = [a.da * a.aa * a.la for a in per_alpha]
    if no_tp or min(products) <= 0:
        hota = 0.0
    else:
        hota = math.exp(sum(math.log(v) for v in products) / len(products)) ** (1.0 / 3.0)
    k = len(per_alpha)
    return HotaResult(
        hota=hota,
        deta=sum(a.da for a in per_alpha) / k,
        assa=sum(a.aa for a in per_alpha) / k,
        loca=sum(a.la for a in per_alpha) / k,
        per_alpha=tuple(per_alpha),
        no_true_positives=no_tp,
    )


def margin_eval(gt: TrackSet, pred: TrackSet, mapping: IdMapping, avg_size: float | None = None) -> MarginReport:
    """Two-tier center test at 0.5x and 2x the average ground-truth box size.

    Every ground-truth instance lands in exactly one tier. A prediction is a
    false positive unless it is the mapped partner of a ground-truth instance
    in the same frame within the outer tier.
    """
    if not gt.records:
        raise DataError("margin evaluation needs ground truth")
    avg = average_box_size(gt) if avg_size is None else avg_size
    inner, outer = 0.5 * avg, 2.0 * avg
    pred_at = {(r.frame, r.id): r for r in pred.records}
    g2p = mapping.gt_to_pred
    within = near = missed = 0
    used = set()
    for r in gt.records:
        p = g2p.get(r.id)
        pr = pred_at.get((r.frame, p)) if p is not None else None
        if pr is None:
            missed += 1
            continue
        d = math.hypot(r.cx - pr.cx, r.cy - pr.cy)
        if d <= inner:
            within += 1
        elif d <= outer:
            near += 1
        else:
            missed += 1
            continue
        used.add((pr.frame, pr.id))
    n = len(gt.records)
    fp = (len(pred.records) - len(used)) / len(pred.records) if pred.records else 0.0
    return MarginReport(within / n, near / n, missed / n, fp)


def completeness(gt: TrackSet, pred: TrackSet, mapping: IdMapping) -> CompletenessReport:
    g2p = mapping.gt_to_pred
    pred_frames: dict[int, set[int]] = {}
    for r in pred.records:
        pred_frames.setdefault(r.id, set()).add(r.frame)
    missing: dict[int, list[int] | None] = {}
    for g, recs in gt.by_id().items():
        p = g2p.get(g)
        if p is None:
            missing[g] = None
        else:
            missing[g] = sorted({r.frame for r in recs} - pred_frames.get(p, set()))
    return CompletenessReport(missing)


@dataclass
class Evaluation:
    video: str
    mapping: IdMapping
    counts: ConfusionCounts
    report: MetricReport
    margins: MarginReport
    completeness: CompletenessReport
    hota: HotaResult
    ids: IdScores
    pr: PrecisionRecall


def evaluate(gt: TrackSet, pred: TrackSet, cfg: EvalConfig = EvalConfig(), video: str = "") -> Evaluation:
    """Every metric for one video."""
    mapping = map_ids(gt, pred, cfg=cfg)
    counts = frame_confusion(gt, pred, mapping, cfg=cfg)
    pr = precision_recall(counts)
    hota = hota_suite(gt, pred, cfg.alphas, cfg=cfg)
    ids = idf1(gt, pred, mapping, cfg=cfg)
    report = MetricReport(
        precision=pr.precision,
        recall=pr.recall,
        hota=hota.hota,
        mota=mota(counts),
        assa=hota.assa,
        deta=hota.deta,
        idf1=ids.idf1,
        loca=hota.loca,
    )
    return Evaluation(
        video or gt.video_id,
        mapping,
        counts,
        report,
        margin_eval(gt, pred, mapping),
        completeness(gt, pred, mapping),
        hota,
        ids,
        pr,
    )


METRIC_COLUMNS = ("Precision", "Recall", "HOTA", "MOTA", "AssA", "DetA", "IDF1")
MARGIN_COLUMNS = ("Within Margin", "Not Within Margin", "Not Identified", "False Positive")


def _table(header: Sequence[str], rows: Sequence[tuple[str, Sequence[float]]], average: bool) -> str:
    lines = [",".join(("ID",) + tuple(header))]
    for name, values in rows:
        lines.append(",".join([name] + [f"{v:.3f}" for v in values]))
    if average and rows:
        means = np.mean([v for _, v in rows], axis=0)
        lines.append(",".join(["Average"] + [f"{v:.3f}" for v in means]))
    return "\n".join(lines) + "\n"


def format_metric_table(rows: Sequence[tuple[str, MetricReport]], average: bool = True) -> str:
    values = [(n, (r.precision, r.recall, r.hota, r.mota, r.assa, r.deta, r.idf1)) for n, r in rows]
    return _table(METRIC_COLUMNS, values, average)


def format_margin_table(rows: Sequence[tuple[str, MarginReport]], average: bool = True) -> str:
    values = [(n, (m.within_margin, m.not_within_margin, m.not_identified, m.false_positive)) for n, m in rows]
    return _table(MARGIN_COLUMNS, values, average)


def completeness_json(reports: dict[str, CompletenessReport]) -> tuple[str, str]:
    """``(frame_lists_json, counts_json)`` keyed by video then ground-truth id."""
    frames = {v: r.frame_lists() for v, r in sorted(reports.items())}
    counts = {v: r.counts() for v, r in sorted(reports.items())}
    return json.dumps(frames, indent=2) + "\n", json.dumps(counts, indent=2) + "\n"
