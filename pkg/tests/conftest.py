from __future__ import annotations

import numpy as np
import pytest

from stereotrack.mot_io import StereoRig, TrackRecord, TrackSet


def make_tracks(rows, frame_count=None, view="mono", video_id="toy", size=(1920, 1080)) -> TrackSet:
    """rows: (frame, id, cx, cy[, x_off, y_off]) tuples; offsets default to 10."""
    recs = []
    for row in rows:
        f, i, cx, cy, *off = row
        xo, yo = off if off else (10.0, 10.0)
        recs.append(TrackRecord(int(f), int(i), float(cx), float(cy), float(xo), float(yo)))
    return TrackSet(recs, video_id=video_id, view=view, frame_count=frame_count, image_size=size)


def track(tid, frames, start, velocity=(0.0, 0.0), off=(10.0, 10.0)):
    """Straight-line track rows for ``frames`` starting at ``start``."""
    f0 = frames[0]
    return [(f, tid, start[0] + velocity[0] * (f - f0), start[1] + velocity[1] * (f - f0), *off) for f in frames]


@pytest.fixture
def rectified_rig() -> StereoRig:
    return StereoRig(np.eye(3), np.eye(3), np.zeros(5), np.zeros(5), np.eye(3), np.array([-1.0, 0.0, 0.0]))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
