"""The one distance used everywhere: Euclidean.

Triplet loss, hard mining, and gallery ranking must agree on the metric, so
they all import from here. ``euclidean`` is defined through the same kernel
as ``pairwise_distances`` to keep the scalar and matrix paths numerically
identical.
"""

from __future__ import annotations

import numpy as np

from . import accel

pairwise_distances = accel.pairwise_distances


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two vectors of equal length."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got {a.shape} and {b.shape}")
    return float(pairwise_distances(a[None, :], b[None, :])[0, 0])
