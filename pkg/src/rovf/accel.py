"""Numeric hot-path kernels: numba-compiled with a pure-NumPy fallback.

The compiled path is used when numba imports cleanly and the environment
variable ``ROVF_NO_NUMBA`` is unset/empty; otherwise the vectorized NumPy
implementations are bound to the public names. Both paths compute the same
arithmetic; ``benchmarks/bench_kernels.py`` compares their throughput and
``tests/test_accel.py`` checks their agreement.

Public kernels:
  - crop_resize_bilinear: square crop (zero fill outside the image) fused
    with a bilinear resample to a fixed output resolution.
  - pairwise_distances:   Euclidean distance matrix between two row sets.
  - render_scene_frame:   procedural scene rasterizer for synthetic videos.
"""

from __future__ import annotations

import math
import os

import numpy as np

NUMBA_ENV_FLAG = "ROVF_NO_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

numba_available = _numba is not None
numba_enabled = numba_available and not os.environ.get(NUMBA_ENV_FLAG)


# ---------------------------------------------------------------------------
# crop + bilinear resize
#
# The conceptual intermediate is a `side x side` square centred on (cx, cy)
# in source-pixel coordinates, zero everywhere outside the image; the kernel
# samples that square directly on the output grid so crop and resize are a
# single pass. Pixel (r, c) has its centre at (c + 0.5, r + 0.5), so a crop
# whose side equals the output size and whose left edge lies on an integer
# coordinate reproduces source pixels exactly.
# ---------------------------------------------------------------------------

def _crop_resize_loops(image, cx, cy, side, out):
    height, width, channels = image.shape
    out_size = out.shape[1]
    scale = side / out_size
    left = cx - side * 0.5
    top = cy - side * 0.5
    for oy in range(out_size):
        v = top + (oy + 0.5) * scale - 0.5
        y0 = int(math.floor(v))
        fy = v - y0
        y1 = y0 + 1
        y0_in = 0 <= y0 < height
        y1_in = 0 <= y1 < height
        for ox in range(out_size):
            u = left + (ox + 0.5) * scale - 0.5
            x0 = int(math.floor(u))
            fx = u - x0
            x1 = x0 + 1
            x0_in = 0 <= x0 < width
            x1_in = 0 <= x1 < width
            for c in range(channels):
                p00 = image[y0, x0, c] if (y0_in and x0_in) else 0.0
                p01 = image[y0, x1, c] if (y0_in and x1_in) else 0.0
                p10 = image[y1, x0, c] if (y1_in and x0_in) else 0.0
                p11 = image[y1, x1, c] if (y1_in and x1_in) else 0.0
                row0 = (1.0 - fx) * p00 + fx * p01
                row1 = (1.0 - fx) * p10 + fx * p11
                out[c, oy, ox] = (1.0 - fy) * row0 + fy * row1
    return out


def crop_resize_bilinear_np(
    image: np.ndarray, cx: float, cy: float, side: float, out_size: int
) -> np.ndarray:
    """Pure-NumPy crop+resize; same arithmetic as the compiled loops."""
    height, width, channels = image.shape
    scale = side / out_size
    left = cx - side * 0.5
    top = cy - side * 0.5

    u = left + (np.arange(out_size) + 0.5) * scale - 0.5
    v = top + (np.arange(out_size) + 0.5) * scale - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0

    def gather(yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        valid = ((yi >= 0) & (yi < height))[:, None] & ((xi >= 0) & (xi < width))[None, :]
        vals = image[np.clip(yi, 0, height - 1)[:, None], np.clip(xi, 0, width - 1)[None, :], :]
        return np.where(valid[:, :, None], vals, 0.0)

    p00 = gather(y0, x0)
    p01 = gather(y0, x0 + 1)
    p10 = gather(y0 + 1, x0)
    p11 = gather(y0 + 1, x0 + 1)
    fx_b = fx[None, :, None]
    fy_b = fy[:, None, None]
    row0 = (1.0 - fx_b) * p00 + fx_b * p01
    row1 = (1.0 - fx_b) * p10 + fx_b * p11
    blended = (1.0 - fy_b) * row0 + fy_b * row1
    return np.ascontiguousarray(blended.transpose(2, 0, 1)).astype(image.dtype)


# ---------------------------------------------------------------------------
# pairwise Euclidean distances
# ---------------------------------------------------------------------------

def _pairwise_loops(x, y, out):
    n, dim = x.shape
    m = y.shape[0]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(dim):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = math.sqrt(acc)
    return out


def pairwise_distances_np(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance matrix via broadcasting; rows of x against rows of y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


# ---------------------------------------------------------------------------
# synthetic scene rasterizer
#
# A frame is a slowly varying sinusoidal background with `n` square textured
# patches drawn over it in index order (later indices draw on top). Patch i
# is centred at centers[i], has side sizes[i], and its colour at local
# coordinates (u, v) in [-0.5, 0.5]^2 is
#   base_colors[i, c] + sum_w waves[i, w, 3 + c] *
#       sin(2*pi*(waves[i, w, 0]*u + waves[i, w, 1]*v) + waves[i, w, 2])
# clipped to [0, 1]. Texture coordinates ride with the patch centre so the
# pattern is stable in the patch frame.
# ---------------------------------------------------------------------------

def _render_loops(
    height, width, bg_base, bg_waves, centers, sizes, base_colors, waves, brightness, out
):
    two_pi = 2.0 * math.pi
    n = centers.shape[0]
    n_waves = waves.shape[1]
    for yi in range(height):
        for xi in range(width):
            for c in range(3):
                val = bg_base[c] + bg_waves[c, 3] * math.sin(
                    two_pi * (bg_waves[c, 0] * xi / width + bg_waves[c, 1] * yi / height)
                    + bg_waves[c, 2]
                )
                out[yi, xi, c] = val
            for i in range(n):
                half = sizes[i] * 0.5
                du = xi + 0.5 - centers[i, 0]
                dv = yi + 0.5 - centers[i, 1]
                if -half <= du < half and -half <= dv < half:
                    u = du / sizes[i]
                    v = dv / sizes[i]
                    for c in range(3):
                        val = base_colors[i, c]
                        for w in range(n_waves):
                            val += waves[i, w, 3 + c] * math.sin(
                                two_pi * (waves[i, w, 0] * u + waves[i, w, 1] * v)
                                + waves[i, w, 2]
                            )
                        out[yi, xi, c] = val * brightness[i]
    for yi in range(height):
        for xi in range(width):
            for c in range(3):
                if out[yi, xi, c] < 0.0:
                    out[yi, xi, c] = 0.0
                elif out[yi, xi, c] > 1.0:
                    out[yi, xi, c] = 1.0
    return out


def render_scene_frame_np(
    height: int,
    width: int,
    bg_base: np.ndarray,
    bg_waves: np.ndarray,
    centers: np.ndarray,
    sizes: np.ndarray,
    base_colors: np.ndarray,
    waves: np.ndarray,
    brightness: np.ndarray,
) -> np.ndarray:
    two_pi = 2.0 * math.pi
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    frame = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        frame[:, :, c] = bg_base[c] + bg_waves[c, 3] * np.sin(
            two_pi * (bg_waves[c, 0] * xs[None, :] / width + bg_waves[c, 1] * ys[:, None] / height)
            + bg_waves[c, 2]
        )
    for i in range(centers.shape[0]):
        half = sizes[i] * 0.5
        du = xs[None, :] + 0.5 - centers[i, 0]
        dv = ys[:, None] + 0.5 - centers[i, 1]
        inside = (du >= -half) & (du < half) & (dv >= -half) & (dv < half)
        if not inside.any():
            continue
        u = du / sizes[i]
        v = dv / sizes[i]
        for c in range(3):
            tex = np.full((height, width), base_colors[i, c])
            for w in range(waves.shape[1]):
                tex += waves[i, w, 3 + c] * np.sin(
                    two_pi * (waves[i, w, 0] * u + waves[i, w, 1] * v) + waves[i, w, 2]
                )
            frame[:, :, c] = np.where(inside, tex * brightness[i], frame[:, :, c])
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if numba_available:
    _crop_resize_jit = _numba.njit(cache=True)(_crop_resize_loops)
    _pairwise_jit = _numba.njit(cache=True)(_pairwise_loops)
    _render_jit = _numba.njit(cache=True)(_render_loops)

    def crop_resize_bilinear_nb(
        image: np.ndarray, cx: float, cy: float, side: float, out_size: int
    ) -> np.ndarray:
        out = np.empty((image.shape[2], out_size, out_size), dtype=image.dtype)
        return _crop_resize_jit(image, float(cx), float(cy), float(side), out)

    def pairwise_distances_nb(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        out = np.empty((x.shape[0], y.shape[0]), dtype=np.float64)
        return _pairwise_jit(x, y, out)

    def render_scene_frame_nb(
        height, width, bg_base, bg_waves, centers, sizes, base_colors, waves, brightness
    ) -> np.ndarray:
        out = np.empty((height, width, 3), dtype=np.float64)
        _render_jit(
            height, width, bg_base, bg_waves, centers, sizes, base_colors, waves, brightness, out
        )
        return out.astype(np.float32)


if numba_enabled:
    crop_resize_bilinear = crop_resize_bilinear_nb
    pairwise_distances = pairwise_distances_nb
    render_scene_frame = render_scene_frame_nb
else:
    crop_resize_bilinear = crop_resize_bilinear_np
    pairwise_distances = pairwise_distances_np
    render_scene_frame = render_scene_frame_np
