"""Synthetic desk-scale stand-in for annotated enclosure videos.

Each synthetic video contains ``n_identities`` moving textured square
patches over a sinusoidal background. An identity's texture (base colour +
sinusoid mixture) and motion statistics are drawn per identity, so clips of
the same track look alike and clips of co-occurring tracks look different.
Identities sit on a loose grid and oscillate around their home cell, which
keeps every identity visible in every frame (the co-occurrence graph of one
video is complete) while limiting patch overlap.

Two identity-irrelevant nuisances make retrieval require actual learning
rather than raw-pixel similarity: each patch's brightness oscillates over
time (same texture, different exposure between clips), and the annotated
box centre drifts around the true patch centre (the crop does not hold the
patch perfectly registered).

Everything is a pure function of the seed: calling ``synth_tracks`` twice
with the same arguments yields identical tracks and identical pixels.
"""

from __future__ import annotations

import colorsys
import csv
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import accel
from .streams import derive
from .tracks import Track

_N_TEXTURE_WAVES = 3


@dataclass(frozen=True)
class _IdentityParams:
    base_color: np.ndarray  # (3,)
    waves: np.ndarray  # (_N_TEXTURE_WAVES, 6): fx, fy, phase, amp_r, amp_g, amp_b
    home: tuple[float, float]
    motion_amp: tuple[float, float]
    motion_freq: tuple[float, float]
    motion_phase: tuple[float, float]
    base_size: float
    size_amp: float
    size_freq: float
    size_phase: float
    bright_amp: float
    bright_freq: float
    bright_phase: float
    jitter_frac: float
    jitter_freq: tuple[float, float]
    jitter_phase: tuple[float, float]

    def center(self, t: float) -> tuple[float, float]:
        cx = self.home[0] + self.motion_amp[0] * math.sin(
            2.0 * math.pi * self.motion_freq[0] * t + self.motion_phase[0]
        )
        cy = self.home[1] + self.motion_amp[1] * math.sin(
            2.0 * math.pi * self.motion_freq[1] * t + self.motion_phase[1]
        )
        return cx, cy

    def size(self, t: float) -> float:
        return self.base_size + self.size_amp * math.sin(
            2.0 * math.pi * self.size_freq * t + self.size_phase
        )

    def brightness(self, t: float) -> float:
        return 1.0 + self.bright_amp * math.sin(
            2.0 * math.pi * self.bright_freq * t + self.bright_phase
        )

    def box_center(self, t: float) -> tuple[float, float]:
        """Annotated box centre: the true centre plus smooth annotation jitter."""
        cx, cy = self.center(t)
        s = self.size(t)
        jx = self.jitter_frac * s * math.sin(
            2.0 * math.pi * self.jitter_freq[0] * t + self.jitter_phase[0]
        )
        jy = self.jitter_frac * s * math.sin(
            2.0 * math.pi * self.jitter_freq[1] * t + self.jitter_phase[1]
        )
        return cx + jx, cy + jy


@dataclass(frozen=True)
class _VideoParams:
    video_id: int
    image_size: int
    source_fps: int
    n_frames: int
    bg_base: np.ndarray  # (3,)
    bg_waves: np.ndarray  # (3, 4): fx, fy, phase, amp
    identities: tuple[_IdentityParams, ...]


def _draw_identity(
    rng: np.random.Generator,
    index: int,
    n_identities: int,
    home: tuple[float, float],
    box_range: tuple[float, float],
    motion_amp_max: float,
) -> _IdentityParams:
    # evenly spaced hues with jitter keep identities chromatically distinct;
    # muted saturation keeps colour from trivially dominating the texture
    hue = (index + rng.uniform(0.1, 0.9)) / n_identities
    sat = rng.uniform(0.3, 0.5)
    val = rng.uniform(0.45, 0.6)
    base_color = np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val), dtype=np.float64)
    waves = np.empty((_N_TEXTURE_WAVES, 6), dtype=np.float64)
    for w in range(_N_TEXTURE_WAVES):
        waves[w, 0] = rng.uniform(1.0, 6.0) * (1 if rng.random() < 0.5 else -1)
        waves[w, 1] = rng.uniform(1.0, 6.0) * (1 if rng.random() < 0.5 else -1)
        waves[w, 2] = rng.uniform(0.0, 2.0 * math.pi)
        waves[w, 3:6] = rng.uniform(0.05, 0.16, size=3)
    lo, hi = box_range
    base_size = rng.uniform(lo + 2.0, hi - 2.0)
    return _IdentityParams(
        base_color=base_color,
        waves=waves,
        home=home,
        motion_amp=(rng.uniform(2.0, motion_amp_max), rng.uniform(2.0, motion_amp_max)),
        motion_freq=(rng.uniform(0.02, 0.09), rng.uniform(0.02, 0.09)),
        motion_phase=(rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
        base_size=base_size,
        size_amp=rng.uniform(0.5, 2.0),
        size_freq=rng.uniform(0.02, 0.07),
        size_phase=rng.uniform(0, 2 * math.pi),
        bright_amp=rng.uniform(0.18, 0.32),
        bright_freq=rng.uniform(0.05, 0.15),
        bright_phase=rng.uniform(0, 2 * math.pi),
        jitter_frac=rng.uniform(0.08, 0.16),
        jitter_freq=(rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)),
        jitter_phase=(rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
    )


def _draw_video(
    seed: int,
    video_id: int,
    n_identities: int,
    duration_s: int,
    image_size: int,
    box_range: tuple[float, float],
    source_fps: int,
) -> _VideoParams:
    rng = derive(seed, "synth-video", video_id)
    bg_base = rng.uniform(0.3, 0.5, size=3)
    bg_waves = np.column_stack(
        [
            rng.uniform(0.5, 2.5, size=3),
            rng.uniform(0.5, 2.5, size=3),
            rng.uniform(0, 2 * math.pi, size=3),
            rng.uniform(0.02, 0.05, size=3),
        ]
    )
    grid = max(1, math.ceil(math.sqrt(n_identities)))
    cell = image_size / grid
    motion_amp_max = max(2.5, (cell - box_range[1]) / 2.0 - 1.0)
    slots = [(gx, gy) for gy in range(grid) for gx in range(grid)]
    rng.shuffle(slots)
    identities = []
    for i in range(n_identities):
        gx, gy = slots[i % len(slots)]
        home = ((gx + 0.5) * cell, (gy + 0.5) * cell)
        identities.append(
            _draw_identity(rng, i, n_identities, home, box_range, motion_amp_max)
        )
    return _VideoParams(
        video_id=video_id,
        image_size=image_size,
        source_fps=source_fps,
        n_frames=duration_s * source_fps,
        bg_base=bg_base,
        bg_waves=bg_waves,
        identities=tuple(identities),
    )


class SynthFrameSource:
    """Renders frames on demand from scene parameters, with a small LRU."""

    def __init__(self, videos: dict[int, _VideoParams], cache_frames: int = 64):
        self._videos = videos
        self._cache: OrderedDict[tuple[int, int], np.ndarray] = OrderedDict()
        self._cache_frames = cache_frames

    def get_frame(self, video_id: int, frame_index: int) -> np.ndarray:
        from .clips import FrameLookupError

        key = (video_id, frame_index)
        cached = self._cache.get(key)
        if cached is not None:
            self._cache.move_to_end(key)
            return cached
        params = self._videos.get(video_id)
        if params is None or not (0 <= frame_index < params.n_frames):
            raise FrameLookupError(video_id, frame_index)
        t = frame_index / params.source_fps
        centers = np.array([ident.center(t) for ident in params.identities], dtype=np.float64)
        sizes = np.array([ident.size(t) for ident in params.identities], dtype=np.float64)
        base_colors = np.stack([ident.base_color for ident in params.identities])
        waves = np.stack([ident.waves for ident in params.identities])
        brightness = np.array(
            [ident.brightness(t) for ident in params.identities], dtype=np.float64
        )
        frame = accel.render_scene_frame(
            params.image_size,
            params.image_size,
            params.bg_base,
            params.bg_waves,
            centers,
            sizes,
            base_colors,
            waves,
            brightness,
        )
        self._cache[key] = frame
        if len(self._cache) > self._cache_frames:
            self._cache.popitem(last=False)
        return frame


def synth_tracks(
    n_identities: int,
    duration_s: int,
    seed: int,
    *,
    n_videos: int = 1,
    image_size: int = 304,
    box_range: tuple[float, float] = (44.0, 60.0),
    source_fps: int = 1,
    video_id_start: int = 0,
    track_id_start: int = 0,
) -> tuple[list[Track], SynthFrameSource]:
    """Deterministic synthetic tracks plus a frame provider.

    Each of ``n_videos`` videos holds ``n_identities`` fresh identities; one
    identity yields one track covering the whole video, so all tracks within
    a video co-occur.
    """
    if n_identities < 1:
        raise ValueError("n_identities must be >= 1")
    if duration_s < 1 or n_videos < 1:
        raise ValueError("duration_s and n_videos must be >= 1")
    videos: dict[int, _VideoParams] = {}
    tracks: list[Track] = []
    next_track = track_id_start
    for v in range(n_videos):
        video_id = video_id_start + v
        params = _draw_video(
            seed, video_id, n_identities, duration_s, image_size, box_range, source_fps
        )
        videos[video_id] = params
        frames = np.arange(params.n_frames, dtype=np.int64)
        times = frames / source_fps
        for ident in params.identities:
            boxes = np.empty((params.n_frames, 4), dtype=np.float64)
            for i, t in enumerate(times):
                bx, by = ident.box_center(float(t))
                s = ident.size(float(t))
                boxes[i] = (bx - s / 2.0, by - s / 2.0, s, s)
            tracks.append(
                Track(
                    track_id=next_track,
                    video_id=video_id,
                    frames=frames.copy(),
                    boxes=boxes,
                    occluded=np.zeros(params.n_frames, dtype=bool),
                )
            )
            next_track += 1
    return tracks, SynthFrameSource(videos)


def write_dataset(
    tracks: list[Track],
    source: SynthFrameSource,
    out_dir: str | Path,
) -> tuple[Path, Path]:
    """Materialize a synthetic scene as PNG frames plus a tracks CSV."""
    from PIL import Image

    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    by_video: dict[int, set[int]] = {}
    for track in tracks:
        by_video.setdefault(track.video_id, set()).update(int(f) for f in track.frames)
    for video_id, frame_ids in sorted(by_video.items()):
        video_dir = frames_dir / f"video_{video_id:03d}"
        video_dir.mkdir(exist_ok=True)
        for frame_index in sorted(frame_ids):
            frame = source.get_frame(video_id, frame_index)
            img = Image.fromarray(np.round(frame * 255.0).astype(np.uint8))
            img.save(video_dir / f"frame_{frame_index:06d}.png")

    csv_path = out_dir / "tracks.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frame", "track_id", "x", "y", "w", "h", "occluded"])
        for track in tracks:
            for i, frame in enumerate(track.frames):
                x, y, w, h = track.boxes[i]
                writer.writerow(
                    [
                        track.video_id,
                        int(frame),
                        track.track_id,
                        f"{x:.3f}",
                        f"{y:.3f}",
                        f"{w:.3f}",
                        f"{h:.3f}",
                        int(track.occluded[i]),
                    ]
                )
    return frames_dir, csv_path
