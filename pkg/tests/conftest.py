from __future__ import annotations

import numpy as np
import pytest

from rovf.clips import IngestConfig, build_manifest
from rovf.tracks import Track

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[acceptance] {name}: {outcome}")


def make_track(
    track_id: int,
    video_id: int = 0,
    n_frames: int = 30,
    start: int = 0,
    size: float = 100.0,
    occluded_at: tuple[int, ...] = (),
) -> Track:
    frames = np.arange(start, start + n_frames, dtype=np.int64)
    boxes = np.tile(np.array([10.0, 20.0, size, size * 0.8]), (n_frames, 1))
    occ = np.zeros(n_frames, dtype=bool)
    for i in occluded_at:
        occ[i] = True
    return Track(track_id=track_id, video_id=video_id, frames=frames, boxes=boxes, occluded=occ)


@pytest.fixture
def small_cfg() -> IngestConfig:
    return IngestConfig(resize_to=32, min_box=40.0)


def structural_manifest(
    n_videos: int = 3,
    tracks_per_video: int = 6,
    clips_per_track: int = 12,
    min_box: float = 40.0,
):
    """Manifest with realistic geometry but no pixels, for protocol tests."""
    tracks = []
    track_id = 0
    duration = 10 + int((clips_per_track - 1) * 10 / 3) + 1
    for video in range(n_videos):
        for _ in range(tracks_per_video):
            tracks.append(make_track(track_id, video_id=video, n_frames=duration, size=90.0))
            track_id += 1
    cfg = IngestConfig(resize_to=32, min_box=min_box)
    manifest = build_manifest(tracks, cfg)
    return manifest
