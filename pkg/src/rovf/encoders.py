"""Frame encoders and the per-frame embedding interchange format.

Two encoders produce frame tokens (n_tokens x d_model matrices):

  - ToyPatchEncoder: non-overlapping square patches linearly projected to
    d_model, plus fixed sinusoidal positional offsets. Small enough to train
    end to end at desk scale.
  - PrecomputedEncoder: verbatim lookup of tokens imported from a binary
    embedding file, for plugging in features from external backbones that
    are out of scope to run here.

The averaging baseline collapses tokens -> frame mean -> video mean. Sums
are taken over per-dimension sorted values, so reordering tokens or frames
cannot change the floating-point result (exact permutation invariance).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .streams import derive

EMBEDDING_MAGIC = b"RVFE"
EMBEDDING_VERSION = 1


class EncoderError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


def sinusoidal_positions(n_tokens: int, d_model: int) -> np.ndarray:
    """Fixed positional offsets: sin on even dims, cos on odd dims."""
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _patchify(frame: np.ndarray, patch_size: int) -> np.ndarray:
    channels, height, width = frame.shape
    if height % patch_size or width % patch_size:
        raise EncoderError(
            f"frame {height}x{width} not divisible by patch size {patch_size}"
        )
    gy, gx = height // patch_size, width // patch_size
    patches = frame.reshape(channels, gy, patch_size, gx, patch_size)
    patches = patches.transpose(1, 3, 0, 2, 4)
    return patches.reshape(gy * gx, channels * patch_size * patch_size)


class ToyPatchEncoder:
    """Linear patch projection with sinusoidal positional offsets."""

    needs_pixels = True
    kind = "toy_patch"

    def __init__(
        self,
        patch_size: int,
        d_model: int = 768,
        channels: int = 3,
        trainable: bool = True,
        seed: int = 0,
        dtype=np.float32,
    ):
        if patch_size < 1 or d_model < 1:
            raise EncoderError("patch_size and d_model must be positive")
        self.patch_size = patch_size
        self.d_model = d_model
        self.channels = channels
        self.trainable = trainable
        self.seed = seed
        patch_dim = channels * patch_size * patch_size
        rng = derive(seed, "toy-encoder")
        self.params = {
            "patch.w": rng.normal(0.0, 0.02, size=(patch_dim, d_model)).astype(dtype),
            "patch.b": np.zeros(d_model, dtype=dtype),
        }
        self._pos_cache: dict[int, np.ndarray] = {}

    def _positions(self, n_tokens: int) -> np.ndarray:
        table = self._pos_cache.get(n_tokens)
        if table is None:
            table = sinusoidal_positions(n_tokens, self.d_model).astype(
                self.params["patch.w"].dtype
            )
            self._pos_cache[n_tokens] = table
        return table

    def encode_frame(self, frame: np.ndarray) -> np.ndarray:
        """Tokens for one (channels, H, W) frame."""
        tokens, _ = self.encode_frame_with_cache(frame)
        return tokens

    def encode_frame_with_cache(self, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        patches = _patchify(np.asarray(frame), self.patch_size).astype(
            self.params["patch.w"].dtype
        )
        tokens = patches @ self.params["patch.w"] + self.params["patch.b"]
        tokens += self._positions(tokens.shape[0])
        return tokens, patches

    def encode_clip(self, block: np.ndarray) -> np.ndarray:
        """Tokens for a (frames, channels, H, W) pixel block."""
        tokens, _ = self.encode_clip_with_cache(block)
        return tokens

    def encode_clip_with_cache(self, block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        block = np.asarray(block)
        frames, channels, height, width = block.shape
        if channels != self.channels:
            raise EncoderError(f"expected {self.channels} channels, got {channels}")
        n_tokens = (height // self.patch_size) * (width // self.patch_size)
        patch_dim = channels * self.patch_size * self.patch_size
        patches = np.empty((frames, n_tokens, patch_dim), dtype=self.params["patch.w"].dtype)
        for f in range(frames):
            patches[f] = _patchify(block[f], self.patch_size)
        tokens = patches @ self.params["patch.w"] + self.params["patch.b"]
        tokens += self._positions(n_tokens)[None, :, :]
        return tokens, patches

    def backward(self, d_tokens: np.ndarray, patches: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(tokens) for one clip."""
        dw = np.tensordot(patches, d_tokens, axes=([0, 1], [0, 1]))
        db = d_tokens.sum(axis=(0, 1))
        return {"patch.w": dw, "patch.b": db}

    def config_dict(self) -> dict:
        return {
            "kind": self.kind,
            "patch_size": self.patch_size,
            "d_model": self.d_model,
            "channels": self.channels,
            "trainable": self.trainable,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict, dtype=np.float32) -> "ToyPatchEncoder":
        return cls(
            patch_size=int(cfg["patch_size"]),
            d_model=int(cfg["d_model"]),
            channels=int(cfg.get("channels", 3)),
            trainable=bool(cfg.get("trainable", True)),
            seed=int(cfg.get("seed", 0)),
            dtype=dtype,
        )


class PrecomputedEncoder:
    """Serves imported per-frame tokens; parameters cannot be trained."""

    needs_pixels = False
    kind = "precomputed"
    trainable = False

    def __init__(self, store: "EmbeddingStore"):
        self.store = store
        self.d_model = store.d_model
        self.params: dict[str, np.ndarray] = {}

    def encode_clip(self, clip_id: int, n_frames: int) -> np.ndarray:
        tokens = self.store.tokens(clip_id)
        if tokens.shape[0] != n_frames:
            raise EncoderError(
                f"clip {clip_id}: store has {tokens.shape[0]} frames, clip needs {n_frames}"
            )
        return tokens

    def config_dict(self) -> dict:
        return {"kind": self.kind, "d_model": self.d_model}


# ---------------------------------------------------------------------------
# averaging baseline
# ---------------------------------------------------------------------------

def _exact_mean(rows: np.ndarray) -> np.ndarray:
    """Order-independent mean over axis 0: sort per dimension, then reduce."""
    ordered = np.sort(np.asarray(rows, dtype=np.float64), axis=0)
    return np.add.reduce(ordered, axis=0) / rows.shape[0]


def average_baseline(frames: "np.ndarray | list[np.ndarray]") -> np.ndarray:
    """Mean over tokens within each frame, then mean over frames."""
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        frames = list(frames)
    if len(frames) == 0:
        raise EncoderError("average_baseline needs at least one frame")
    d_model = frames[0].shape[1]
    for tokens in frames:
        if tokens.ndim != 2 or tokens.shape[1] != d_model:
            raise EncoderError("all frames must share d_model")
        if tokens.shape[0] < 1:
            raise EncoderError("each frame needs at least one token")
    frame_means = np.stack([_exact_mean(tokens) for tokens in frames])
    return _exact_mean(frame_means)


def first_frame_baseline(frames: "np.ndarray | list[np.ndarray]") -> np.ndarray:
    """Image-style baseline: averaging restricted to the first frame."""
    if len(frames) == 0:
        raise EncoderError("first_frame_baseline needs at least one frame")
    return average_baseline([frames[0]])


# ---------------------------------------------------------------------------
# binary embedding store
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingStore:
    d_model: int
    clips: dict[int, np.ndarray]  # clip_id -> (n_frames, n_tokens, d_model) float32

    def clip_ids(self) -> list[int]:
        return sorted(self.clips)

    def tokens(self, clip_id: int) -> np.ndarray:
        try:
            return self.clips[clip_id]
        except KeyError:
            raise EncoderError(f"no embeddings stored for clip {clip_id}") from None

    def frame(self, clip_id: int, frame_position: int) -> np.ndarray:
        tokens = self.tokens(clip_id)
        if not (0 <= frame_position < tokens.shape[0]):
            raise EncoderError(
                f"clip {clip_id}: frame position {frame_position} outside 0..{tokens.shape[0] - 1}"
            )
        return tokens[frame_position]

    def content_digest(self) -> str:
        hasher = hashlib.sha256()
        for clip_id in self.clip_ids():
            hasher.update(struct.pack("<q", clip_id))
            hasher.update(np.ascontiguousarray(self.clips[clip_id]).tobytes())
        return hasher.hexdigest()


def write_embeddings(path: str | Path, store: EmbeddingStore) -> None:
    """Serialize a store; clips are written in ascending clip-id order."""
    with Path(path).open("wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<HII", EMBEDDING_VERSION, store.d_model, len(store.clips)))
        for clip_id in store.clip_ids():
            tokens = np.ascontiguousarray(store.clips[clip_id], dtype="<f4")
            if tokens.ndim != 3 or tokens.shape[2] != store.d_model:
                raise EmbeddingFormatError(
                    f"clip {clip_id}: tokens shape {tokens.shape} incompatible with d_model {store.d_model}"
                )
            fh.write(struct.pack("<QII", clip_id, tokens.shape[0], tokens.shape[1]))
            fh.write(tokens.tobytes())


def import_embeddings(path: str | Path) -> EmbeddingStore:
    """Read an embedding file, validating magic, version, and payload sizes."""
    data = Path(path).read_bytes()
    if len(data) < 14:
        raise EmbeddingFormatError("file too short for header")
    if data[:4] != EMBEDDING_MAGIC:
        raise EmbeddingFormatError(f"bad magic {data[:4]!r}, expected {EMBEDDING_MAGIC!r}")
    version, d_model, n_clips = struct.unpack_from("<HII", data, 4)
    if version != EMBEDDING_VERSION:
        raise EmbeddingFormatError(f"unsupported version {version}")
    if d_model < 1:
        raise EmbeddingFormatError(f"invalid d_model {d_model}")
    offset = 14
    clips: dict[int, np.ndarray] = {}
    for _ in range(n_clips):
        if offset + 16 > len(data):
            raise EmbeddingFormatError("truncated clip header")
        clip_id, n_frames, n_tokens = struct.unpack_from("<QII", data, offset)
        offset += 16
        count = n_frames * n_tokens * d_model
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise EmbeddingFormatError(
                f"clip {clip_id}: truncated payload, need {nbytes} bytes, have {len(data) - offset}"
            )
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        clips[clip_id] = values.reshape(n_frames, n_tokens, d_model).copy()
        offset += nbytes
    if offset != len(data):
        raise EmbeddingFormatError(f"{len(data) - offset} trailing bytes after payload")
    return EmbeddingStore(d_model=d_model, clips=clips)
