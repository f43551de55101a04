"""Deterministic random-stream derivation.

Every random choice in the pipeline draws from a generator derived from the
single run seed plus a textual/numeric path, e.g. ``derive(seed, "mine",
epoch, batch)``. The same (seed, path) always yields the same stream, and
distinct paths yield independent streams, which is what makes batch
preparation reproducible and parallelizable.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def _component(item: int | str) -> int:
    if isinstance(item, str):
        digest = hashlib.sha256(item.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return int(item) & _MASK


def derive(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and ``path``."""
    entropy = [int(seed) & _MASK] + [_component(item) for item in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
