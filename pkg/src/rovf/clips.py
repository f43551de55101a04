"""Fixed-length clip generation, cropping, and the clip manifest.

A clip is a window of ``clip_seconds`` sampled at ``fps`` frames per second
from one track. Candidate windows start at offsets 0, stagger, 2*stagger, ...
seconds from the track's first frame; a window is emitted iff every sampled
frame exists in the track unoccluded and the largest box dimension over the
sampled frames exceeds ``min_box``. Window admission is decided in exact
rational time (stagger is a Fraction), so clip counts follow the closed form
``floor((T - clip_seconds) / stagger) + 1`` for an always-visible track of T
seconds; only the mapping from sample times to source frame indices rounds
(to the nearest frame, half up).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Protocol

import numpy as np

from . import accel
from .tracks import CoOccurrenceGraph, Track

MIN_ANCHOR_CLIPS = 3  # tracks with fewer clips are never anchors/positives
EVAL_NEGATIVES = 9


class ClipError(ValueError):
    pass


class FrameLookupError(KeyError):
    def __init__(self, video_id: int, frame_index: int):
        super().__init__(f"no frame {frame_index} for video {video_id}")
        self.video_id = video_id
        self.frame_index = frame_index


def round_half_up(value: Fraction) -> int:
    """Nearest integer, ties away from zero toward +inf (exact on Fractions)."""
    return int((value + Fraction(1, 2)).__floor__())


def _parse_fraction(value: str | float | int | Fraction) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value).limit_denominator(1_000_000)


@dataclass(frozen=True)
class IngestConfig:
    clip_seconds: int = 10
    fps: int = 1
    stagger_seconds: Fraction = Fraction(10, 3)
    min_box: float = 70.0
    resize_to: int = 224
    source_fps: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "stagger_seconds", _parse_fraction(self.stagger_seconds))
        if min(self.clip_seconds, self.fps, self.resize_to, self.source_fps) <= 0:
            raise ClipError("clip_seconds, fps, resize_to, source_fps must be positive")
        if self.stagger_seconds <= 0:
            raise ClipError("stagger_seconds must be positive")
        if self.stagger_seconds > self.clip_seconds:
            raise ClipError("stagger_seconds must not exceed clip_seconds")
        if self.min_box <= 0:
            raise ClipError("min_box must be positive")
        if self.fps > self.source_fps:
            raise ClipError("clip fps cannot exceed source fps")

    @property
    def frames_per_clip(self) -> int:
        return self.clip_seconds * self.fps

    def to_json_dict(self) -> dict:
        return {
            "clip_seconds": self.clip_seconds,
            "fps": self.fps,
            "stagger_seconds": str(self.stagger_seconds),
            "min_box": self.min_box,
            "resize_to": self.resize_to,
            "source_fps": self.source_fps,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "IngestConfig":
        return cls(
            clip_seconds=int(data["clip_seconds"]),
            fps=int(data["fps"]),
            stagger_seconds=_parse_fraction(data["stagger_seconds"]),
            min_box=float(data["min_box"]),
            resize_to=int(data["resize_to"]),
            source_fps=int(data["source_fps"]),
        )


@dataclass(frozen=True)
class ClipSpec:
    clip_id: int
    track_id: int
    video_id: int
    start_frame: int
    frame_indices: tuple[int, ...]
    crop_side: float
    crop_centers: tuple[tuple[float, float], ...]

    def to_json_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "track_id": self.track_id,
            "video_id": self.video_id,
            "start_frame": self.start_frame,
            "frame_indices": list(self.frame_indices),
            "crop_side": self.crop_side,
            "crop_centers": [list(c) for c in self.crop_centers],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ClipSpec":
        return cls(
            clip_id=int(data["clip_id"]),
            track_id=int(data["track_id"]),
            video_id=int(data["video_id"]),
            start_frame=int(data["start_frame"]),
            frame_indices=tuple(int(f) for f in data["frame_indices"]),
            crop_side=float(data["crop_side"]),
            crop_centers=tuple((float(c[0]), float(c[1])) for c in data["crop_centers"]),
        )


def _window_frame_indices(track: Track, cfg: IngestConfig, offset_s: Fraction) -> list[int]:
    indices = []
    for i in range(cfg.frames_per_clip):
        t = offset_s + Fraction(i, cfg.fps)
        indices.append(track.first_frame + round_half_up(t * cfg.source_fps))
    return indices


def generate_clips(tracks: list[Track], cfg: IngestConfig) -> list[ClipSpec]:
    """Emit every admissible window of every track, clip ids sequential."""
    clips: list[ClipSpec] = []
    next_id = 0
    for track in tracks:
        frame_pos = {int(f): i for i, f in enumerate(track.frames)}
        duration_s = Fraction(track.last_frame - track.first_frame + 1, cfg.source_fps)
        m = 0
        while m * cfg.stagger_seconds + cfg.clip_seconds <= duration_s:
            indices = _window_frame_indices(track, cfg, m * cfg.stagger_seconds)
            m += 1
            positions = [frame_pos.get(idx) for idx in indices]
            if any(p is None for p in positions):
                continue
            if any(track.occluded[p] for p in positions):
                continue
            boxes = track.boxes[positions]
            largest = float(np.max(np.maximum(boxes[:, 2], boxes[:, 3])))
            if largest <= cfg.min_box:
                continue
            centers = tuple(
                (float(b[0] + b[2] / 2.0), float(b[1] + b[3] / 2.0)) for b in boxes
            )
            clips.append(
                ClipSpec(
                    clip_id=next_id,
                    track_id=track.track_id,
                    video_id=track.video_id,
                    start_frame=indices[0],
                    frame_indices=tuple(indices),
                    crop_side=largest,
                    crop_centers=centers,
                )
            )
            next_id += 1
    return clips


def validate_clip(clip: ClipSpec, track: Track, cfg: IngestConfig) -> None:
    """Re-check the ClipSpec invariants against its source track."""
    if len(clip.frame_indices) != cfg.frames_per_clip:
        raise ClipError(f"clip {clip.clip_id}: wrong length {len(clip.frame_indices)}")
    frame_pos = {int(f): i for i, f in enumerate(track.frames)}
    largest = 0.0
    for idx in clip.frame_indices:
        pos = frame_pos.get(idx)
        if pos is None:
            raise ClipError(f"clip {clip.clip_id}: frame {idx} missing from track")
        if track.occluded[pos]:
            raise ClipError(f"clip {clip.clip_id}: frame {idx} occluded")
        largest = max(largest, float(max(track.boxes[pos, 2], track.boxes[pos, 3])))
    if largest != clip.crop_side:
        raise ClipError(f"clip {clip.clip_id}: crop_side {clip.crop_side} != max dim {largest}")
    if largest <= cfg.min_box:
        raise ClipError(f"clip {clip.clip_id}: crop_side below min_box")


# ---------------------------------------------------------------------------
# frame sources and cropping
# ---------------------------------------------------------------------------

class FrameSource(Protocol):
    """Supplier of decoded frames: (H, W, 3) float32 in [0, 1]."""

    def get_frame(self, video_id: int, frame_index: int) -> np.ndarray: ...


class ArrayFrameSource:
    """In-memory frame source keyed by (video_id, frame_index)."""

    def __init__(self, frames: dict[tuple[int, int], np.ndarray]):
        self._frames = frames

    def get_frame(self, video_id: int, frame_index: int) -> np.ndarray:
        try:
            return self._frames[(video_id, frame_index)]
        except KeyError:
            raise FrameLookupError(video_id, frame_index) from None


class ImageDirectorySource:
    """Directory-of-images source: root/video_{vid:03d}/frame_{idx:06d}.png."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ClipError(f"frame directory not found: {self.root}")

    def path_for(self, video_id: int, frame_index: int) -> Path:
        return self.root / f"video_{video_id:03d}" / f"frame_{frame_index:06d}.png"

    def get_frame(self, video_id: int, frame_index: int) -> np.ndarray:
        from PIL import Image

        path = self.path_for(video_id, frame_index)
        if not path.exists():
            raise FrameLookupError(video_id, frame_index)
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        return arr


def crop_frames(clip: ClipSpec, source: FrameSource, resize_to: int) -> np.ndarray:
    """Pixel block (frames, 3, resize_to, resize_to) for one clip.

    Each frame is cropped to a crop_side square centred on that frame's box
    centre (zero fill outside the image) and bilinearly resampled.
    """
    frames = []
    for idx, (cx, cy) in zip(clip.frame_indices, clip.crop_centers):
        try:
            image = source.get_frame(clip.video_id, idx)
        except FrameLookupError as exc:
            raise ClipError(f"clip {clip.clip_id}: missing frame {idx} (video {clip.video_id})") from exc
        frames.append(accel.crop_resize_bilinear(image, cx, cy, clip.crop_side, resize_to))
    return np.stack(frames, axis=0)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _ingest_stats(tracks: list[Track], clips: list[ClipSpec], graph: CoOccurrenceGraph) -> dict:
    per_track: dict[int, int] = {t.track_id: 0 for t in tracks}
    for clip in clips:
        per_track[clip.track_id] += 1
    clips_of = lambda tid: per_track.get(tid, 0)
    anchor_eligible = [
        tid
        for tid in sorted(per_track)
        if clips_of(tid) >= MIN_ANCHOR_CLIPS
        and any(clips_of(n) > 0 for n in graph.neighbors(tid))
    ]
    eval_eligible = [
        tid
        for tid in sorted(per_track)
        if clips_of(tid) >= 2
        and sum(clips_of(n) for n in graph.neighbors(tid)) >= EVAL_NEGATIVES
    ]
    return {
        "n_videos": len({t.video_id for t in tracks}),
        "n_tracks": len(tracks),
        "n_clips": len(clips),
        "zero_clip_tracks": sorted(tid for tid, n in per_track.items() if n == 0),
        "n_anchor_eligible_tracks": len(anchor_eligible),
        "mining_eligible": bool(anchor_eligible),
        "n_eval_eligible_tracks": len(eval_eligible),
    }


@dataclass
class ClipManifest:
    config: IngestConfig
    clips: list[ClipSpec]
    cooccurrence: CoOccurrenceGraph
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._by_id = {c.clip_id: c for c in self.clips}
        self._by_track: dict[int, list[int]] = {}
        for clip in self.clips:
            self._by_track.setdefault(clip.track_id, []).append(clip.clip_id)

    def clip(self, clip_id: int) -> ClipSpec:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise ClipError(f"unknown clip id {clip_id}") from None

    def clips_of_track(self, track_id: int) -> list[int]:
        return list(self._by_track.get(track_id, []))

    def track_ids(self) -> list[int]:
        return sorted(self._by_track)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "clips": [c.to_json_dict() for c in self.clips],
            "cooccurrence": [list(p) for p in self.cooccurrence.sorted_pairs()],
            "stats": self.stats,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dump_canonical_json(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "ClipManifest":
        data = json.loads(Path(path).read_text())
        return cls(
            config=IngestConfig.from_json_dict(data["config"]),
            clips=[ClipSpec.from_json_dict(c) for c in data["clips"]],
            cooccurrence=CoOccurrenceGraph.from_pairs(data["cooccurrence"]),
            stats=data.get("stats", {}),
        )


def dump_canonical_json(obj) -> str:
    """Stable JSON text so identical runs produce identical bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def build_manifest(tracks: list[Track], cfg: IngestConfig) -> ClipManifest:
    from .tracks import build_cooccurrence

    clips = generate_clips(tracks, cfg)
    graph = build_cooccurrence(tracks)
    stats = _ingest_stats(tracks, clips, graph)
    return ClipManifest(config=cfg, clips=clips, cooccurrence=graph, stats=stats)
