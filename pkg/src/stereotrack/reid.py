"""Post-track re-identification.

Trackers often hand a fish a fresh id after losing it for a few frames. This
module relabels such "new" ids back to the "old" id they continue. Short-lived
ids are then dropped as false positives before the survivors are renumbered.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .mot_io import TrackRecord, TrackSet


@dataclass(frozen=True)
class ReidConfig:
    """Thresholds of the re-identification pass.

    ``window`` is searched on both sides of the old id's last frame, but a
    merge additionally requires the new id to start no earlier than
    ``overlap_limit`` frames before the old id ends.
    """

    window: int = 100
    radius: float = 50.0
    overlap_limit: int = 10
    min_track_len: int = 30
    id_start: int = 0

    def __post_init__(self) -> None:
        for name in ("window", "radius", "overlap_limit", "min_track_len"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ReidConfig.{name} must be strictly positive")
        if not self.overlap_limit < self.window:
            raise ValueError("ReidConfig.overlap_limit must be smaller than window")
        if self.id_start not in (0, 1):
            raise ValueError("ReidConfig.id_start must be 0 or 1")


@dataclass(frozen=True)
class Merge:
    old_id: int
    new_id: int
    merge_frame: int
    distance: float
    dropped_overlap: int = 0


@dataclass
class ReidReport:
    merges: list[Merge] = field(default_factory=list)
    pruned_ids: list[int] = field(default_factory=list)
    id_remap: dict[int, int] = field(default_factory=dict)
    ids_before: int = 0
    ids_after: int = 0

    def to_dict(self) -> dict:
        return {
            "ids_before": self.ids_before,
            "ids_after": self.ids_after,
            "merges": [asdict(m) for m in self.merges],
            "pruned_ids": list(self.pruned_ids),
            "id_remap": {str(k): v for k, v in self.id_remap.items()},
        }


def proximity_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _video_range(tracks: TrackSet) -> tuple[int, int]:
    return 1, tracks.n_frames


def find_candidates(tracks: TrackSet) -> set[int]:
    """Ids whose first-to-last span does not cover the whole video."""
    first, last = _video_range(tracks)
    return {
        tid for tid, recs in tracks.by_id().items() if recs[0].frame != first or recs[-1].frame != last
    }


def _find_merge(tracks: TrackSet, cfg: ReidConfig) -> tuple[int, TrackRecord, float, list[int]] | None:
    """Best qualifying (old, new) pair, or None at the fixpoint."""
    first_frame, last_frame = _video_range(tracks)
    groups = tracks.by_id()
    candidates = find_candidates(tracks)
    olds = sorted(
        (recs[-1].frame, tid) for tid, recs in groups.items() if tid in candidates and recs[-1].frame < last_frame
    )
    for end, old in olds:
        old_recs = groups[old]
        old_frames = [r.frame for r in old_recs]
        tail = set(old_frames[-cfg.overlap_limit :])
        old_set = set(old_frames)
        last_pos = old_recs[-1].center
        best = None
        for new, new_recs in groups.items():
            if new == old or new not in candidates:
                continue
            start = new_recs[0].frame
            if start <= first_frame or new_recs[-1].frame <= end:
                continue
            if not end - cfg.window < start <= end + cfg.window:
                continue
            if start < end - cfg.overlap_limit:
                continue
            overlap = [r.frame for r in new_recs if r.frame in old_set]
            if len(overlap) > cfg.overlap_limit or not set(overlap) <= tail:
                continue
            dist = proximity_distance(new_recs[0].center, last_pos)
            if dist > cfg.radius:
                continue
            key = (dist, start, new)
            if best is None or key < best[0]:
                best = (key, new_recs[0], overlap)
        if best is not None:
            (dist, _, new), first_rec, overlap = best
            return old, first_rec, dist, overlap
    return None


def reid_pass(tracks: TrackSet, cfg: ReidConfig = ReidConfig()) -> tuple[TrackSet, list[Merge]]:
    """Relabel continuation ids onto the id they continue, until nothing changes.

    Old ids are visited in order of their last frame; for each, the qualifying
    new id nearest to its last position wins (then earliest start, then
    smallest id). Records of the new id that coexist with the old id inside
    the tolerated overlap are dropped in favour of the old id's records.
    """
    merges: list[Merge] = []
    while True:
        found = _find_merge(tracks, cfg)
        if found is None:
            return tracks, merges
        old, first_rec, dist, overlap = found
        new = first_rec.id
        drop = set(overlap)
        records = []
        for r in tracks.records:
            if r.id == new:
                if r.frame in drop:
                    continue
                r = r.with_id(old)
            records.append(r)
        tracks = tracks.with_records(records)
        merges.append(Merge(old, new, first_rec.frame, dist, len(drop)))


def prune_short(tracks: TrackSet, cfg: ReidConfig = ReidConfig()) -> tuple[TrackSet, list[int]]:
    counts: dict[int, set[int]] = {}
    for r in tracks.records:
        counts.setdefault(r.id, set()).add(r.frame)
    pruned = sorted(tid for tid, frames in counts.items() if len(frames) < cfg.min_track_len)
    gone = set(pruned)
    return tracks.with_records(r for r in tracks.records if r.id not in gone), pruned


def compact_ids(tracks: TrackSet, start: int = 0) -> tuple[TrackSet, dict[int, int]]:
    """Renumber ids consecutively from ``start`` in order of first appearance."""
    first_seen: dict[int, int] = {}
    for r in tracks.records:
        first_seen.setdefault(r.id, r.frame)
    order = sorted(first_seen, key=lambda tid: (first_seen[tid], tid))
    remap = {tid: i + start for i, tid in enumerate(order)}
    return tracks.with_records(r.with_id(remap[r.id]) for r in tracks.records), remap


def reidentify(tracks: TrackSet, cfg: ReidConfig = ReidConfig()) -> tuple[TrackSet, ReidReport]:
    """Full post-track pass: merge fragments, prune short ids, compact numbering."""
    before = len(tracks.ids())
    merged, merges = reid_pass(tracks, cfg)
    pruned_set, pruned = prune_short(merged, cfg)
    compacted, remap = compact_ids(pruned_set, cfg.id_start)
    report = ReidReport(
        merges=merges, pruned_ids=pruned, id_remap=remap, ids_before=before, ids_after=len(compacted.ids())
    )
    return compacted, report
