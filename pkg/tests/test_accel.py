"""Cross-checks between the numba kernels and the NumPy fallback."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rovf import accel

needs_numba = pytest.mark.skipif(not accel.numba_available, reason="numba unavailable")


def random_image(rng, h=40, w=52):
    return rng.random((h, w, 3)).astype(np.float32)


@needs_numba
def test_crop_paths_identical():
    rng = np.random.default_rng(0)
    image = random_image(rng)
    for _ in range(25):
        cx = float(rng.uniform(-10, 60))
        cy = float(rng.uniform(-10, 50))
        side = float(rng.uniform(3.0, 45.0))
        out = int(rng.integers(4, 33))
        a = accel.crop_resize_bilinear_np(image, cx, cy, side, out)
        b = accel.crop_resize_bilinear_nb(image, cx, cy, side, out)
        np.testing.assert_array_equal(a, b)


@needs_numba
def test_pairwise_paths_agree():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(23, 17))
    y = rng.normal(size=(11, 17))
    a = accel.pairwise_distances_np(x, y)
    b = accel.pairwise_distances_nb(x, y)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
def test_render_paths_agree():
    rng = np.random.default_rng(2)
    bg_base = rng.uniform(0.3, 0.5, size=3)
    bg_waves = rng.uniform(0.1, 2.0, size=(3, 4))
    centers = rng.uniform(10, 50, size=(3, 2))
    sizes = rng.uniform(8, 20, size=3)
    base_colors = rng.uniform(0.2, 0.8, size=(3, 3))
    waves = rng.uniform(-3, 3, size=(3, 2, 6))
    brightness = rng.uniform(0.8, 1.2, size=3)
    a = accel.render_scene_frame_np(60, 64, bg_base, bg_waves, centers, sizes, base_colors, waves, brightness)
    b = accel.render_scene_frame_nb(60, 64, bg_base, bg_waves, centers, sizes, base_colors, waves, brightness)
    assert a.shape == b.shape == (60, 64, 3)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)


def test_pairwise_matches_direct_norm():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 9))
    y = rng.normal(size=(4, 9))
    dists = accel.pairwise_distances(x, y)
    for i in range(6):
        for j in range(4):
            assert dists[i, j] == pytest.approx(math.dist(x[i], y[j]), rel=1e-12)


def test_env_flag_selects_fallback():
    import importlib
    import subprocess
    import sys

    code = (
        "import os; os.environ['ROVF_NO_NUMBA'] = '1'; "
        "from rovf import accel; "
        "assert accel.crop_resize_bilinear is accel.crop_resize_bilinear_np; "
        "assert not accel.numba_enabled; print('fallback ok')"
    )
    result = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert "fallback ok" in result.stdout
    importlib.import_module("rovf.accel")


def test_crop_outside_image_is_zero():
    image = np.ones((16, 16, 3), dtype=np.float32)
    out = accel.crop_resize_bilinear(image, 100.0, 100.0, 8.0, 8)
    assert np.all(out == 0.0)
