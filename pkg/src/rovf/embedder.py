"""Clip -> embedding plumbing shared by mining, training, and evaluation."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .clips import ClipManifest, FrameSource, crop_frames
from .model import RoVFModel, rovf_forward, rovf_forward_with_cache


class ClipEmbedder:
    """Runs encoder + recurrent head over manifest clips, caching pixels.

    Crops never change during a run, so pixel blocks are cached (LRU);
    tokens and embeddings are recomputed because encoder/head parameters
    move during training.
    """

    def __init__(
        self,
        manifest: ClipManifest,
        encoder,
        model: RoVFModel,
        frame_source: FrameSource | None = None,
        cache_clips: int = 4096,
    ):
        if encoder.needs_pixels and frame_source is None:
            raise ValueError("this encoder needs a frame source")
        if encoder.d_model != model.cfg.d_model:
            raise ValueError(
                f"encoder d_model {encoder.d_model} != head d_model {model.cfg.d_model}"
            )
        self.manifest = manifest
        self.encoder = encoder
        self.model = model
        self.frame_source = frame_source
        self._pixel_cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_clips = cache_clips

    def pixels(self, clip_id: int) -> np.ndarray:
        block = self._pixel_cache.get(clip_id)
        if block is not None:
            self._pixel_cache.move_to_end(clip_id)
            return block
        clip = self.manifest.clip(clip_id)
        block = crop_frames(clip, self.frame_source, self.manifest.config.resize_to)
        self._pixel_cache[clip_id] = block
        if len(self._pixel_cache) > self._cache_clips:
            self._pixel_cache.popitem(last=False)
        return block

    def tokens(self, clip_id: int) -> np.ndarray:
        tokens, _ = self.tokens_with_cache(clip_id)
        return tokens

    def tokens_with_cache(self, clip_id: int):
        clip = self.manifest.clip(clip_id)
        if self.encoder.needs_pixels:
            return self.encoder.encode_clip_with_cache(self.pixels(clip_id))
        return self.encoder.encode_clip(clip_id, len(clip.frame_indices)), None

    def embed(self, clip_id: int, train: bool = False, rng=None) -> np.ndarray:
        tokens, _ = self.tokens_with_cache(clip_id)
        return rovf_forward(self.model, tokens, train=train, rng=rng)

    def embed_with_caches(self, clip_id: int, train: bool, rng=None):
        """Returns (embedding, head caches, encoder cache) for backprop."""
        tokens, enc_cache = self.tokens_with_cache(clip_id)
        emb, head_caches = rovf_forward_with_cache(self.model, tokens, train=train, rng=rng)
        return emb, head_caches, enc_cache
