"""Bounding-box track annotations: parsing and the co-occurrence graph.

Track CSV dialect: a header line, then one row per box
``video_id,frame,track_id,x,y,w,h,occluded``. ``video_id``, ``frame``,
``track_id`` are integers; ``x,y,w,h`` may be decimal pixels; ``occluded``
is 0 or 1. Track ids must be unique across the whole file (not just within
one video) because downstream artifacts key clips and graph edges by bare
track id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXPECTED_HEADER = ["video_id", "frame", "track_id", "x", "y", "w", "h", "occluded"]


class TrackParseError(ValueError):
    """Raised for malformed annotation files; messages carry the row number."""


@dataclass(frozen=True)
class Track:
    """One annotated individual's trajectory within one video.

    ``frames`` is strictly increasing; ``boxes`` holds (x, y, w, h) per frame
    with w, h > 0. Annotator ids do not persist across exits/re-entries, so a
    track is a contiguous observation, not an identity.
    """

    track_id: int
    video_id: int
    frames: np.ndarray
    boxes: np.ndarray
    occluded: np.ndarray

    def __post_init__(self) -> None:
        if len(self.frames) == 0:
            raise ValueError(f"track {self.track_id}: empty")
        if np.any(np.diff(self.frames) <= 0):
            raise ValueError(f"track {self.track_id}: frame indices not strictly increasing")
        if np.any(self.boxes[:, 2] <= 0) or np.any(self.boxes[:, 3] <= 0):
            raise ValueError(f"track {self.track_id}: non-positive box dimensions")

    @property
    def n_boxes(self) -> int:
        return len(self.frames)

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    def frame_set(self) -> set[int]:
        return set(int(f) for f in self.frames)


def _parse_row(row: list[str], row_num: int) -> tuple[int, int, int, float, float, float, float, bool]:
    if len(row) != 8:
        raise TrackParseError(f"row {row_num}: expected 8 fields, got {len(row)}")
    try:
        video_id = int(row[0])
        frame = int(row[1])
        track_id = int(row[2])
        x, y, w, h = (float(v) for v in row[3:7])
    except ValueError as exc:
        raise TrackParseError(f"row {row_num}: non-numeric field ({exc})") from exc
    if row[7] not in ("0", "1"):
        raise TrackParseError(f"row {row_num}: occluded must be 0 or 1, got {row[7]!r}")
    if w <= 0 or h <= 0:
        raise TrackParseError(f"row {row_num}: non-positive box size w={w} h={h}")
    return video_id, frame, track_id, x, y, w, h, row[7] == "1"


def parse_tracks(path: str | Path) -> list[Track]:
    """Parse an annotation CSV into Tracks, sorted boxes, strict validation.

    Rows of one track may arrive out of order and are sorted by frame index;
    duplicate frame indices within a track are rejected. Returns tracks in
    first-appearance order.
    """
    path = Path(path)
    if not path.exists():
        raise TrackParseError(f"annotation file not found: {path}")

    grouped: dict[tuple[int, int], list[tuple[int, int, float, float, float, float, bool]]] = {}
    order: list[tuple[int, int]] = []
    track_video: dict[int, int] = {}

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrackParseError("empty annotation file") from None
        if [h.strip() for h in header] != EXPECTED_HEADER:
            raise TrackParseError(f"bad header: expected {','.join(EXPECTED_HEADER)}")
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            video_id, frame, track_id, x, y, w, h, occ = _parse_row(row, row_num)
            seen_video = track_video.setdefault(track_id, video_id)
            if seen_video != video_id:
                raise TrackParseError(
                    f"row {row_num}: track_id {track_id} reused across videos "
                    f"{seen_video} and {video_id}; ids must be globally unique"
                )
            key = (video_id, track_id)
            if key not in grouped:
                grouped[key] = []
                order.append(key)
            grouped[key].append((frame, row_num, x, y, w, h, occ))

    tracks: list[Track] = []
    for key in order:
        rows = sorted(grouped[key], key=lambda r: (r[0], r[1]))
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] == prev[0]:
                raise TrackParseError(
                    f"row {cur[1]}: non-increasing frame {cur[0]} in track {key[1]}"
                )
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        boxes = np.array([[r[2], r[3], r[4], r[5]] for r in rows], dtype=np.float64)
        occluded = np.array([r[6] for r in rows], dtype=bool)
        tracks.append(Track(track_id=key[1], video_id=key[0], frames=frames, boxes=boxes, occluded=occluded))
    return tracks


@dataclass
class CoOccurrenceGraph:
    """Unordered track-id pairs that share at least one frame in one video.

    Sharing a frame guarantees two tracks are different individuals, which is
    the only negative-pair evidence available without identity labels.
    """

    pairs: set[tuple[int, int]] = field(default_factory=set)

    def add(self, a: int, b: int) -> None:
        if a == b:
            raise ValueError("co-occurrence pairs are irreflexive")
        self.pairs.add((min(a, b), max(a, b)))

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.pairs

    def neighbors(self, track_id: int) -> list[int]:
        out = [b for a, b in self.pairs if a == track_id]
        out += [a for a, b in self.pairs if b == track_id]
        return sorted(out)

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)

    @classmethod
    def from_pairs(cls, pairs: list[tuple[int, int]] | list[list[int]]) -> "CoOccurrenceGraph":
        graph = cls()
        for a, b in pairs:
            graph.add(int(a), int(b))
        return graph


def build_cooccurrence(tracks: list[Track]) -> CoOccurrenceGraph:
    """Graph of track pairs with intersecting frame sets, scoped per video."""
    graph = CoOccurrenceGraph()
    by_video: dict[int, list[Track]] = {}
    for track in tracks:
        by_video.setdefault(track.video_id, []).append(track)
    for video_tracks in by_video.values():
        # bucket tracks by frame so sparse videos avoid the full pairwise scan
        frame_members: dict[int, list[int]] = {}
        for track in video_tracks:
            for frame in track.frame_set():
                frame_members.setdefault(frame, []).append(track.track_id)
        for members in frame_members.values():
            if len(members) < 2:
                continue
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    graph.add(members[i], members[j])
    return graph
