from __future__ import annotations

import math

import numpy as np
import pytest

from rovf.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from rovf.clips import IngestConfig, build_manifest
from rovf.encoders import ToyPatchEncoder
from rovf.model import RoVFConfig, init_model
from rovf.synth import synth_tracks
from rovf.training import (
    SGD,
    Adam,
    ScheduleError,
    TrainConfig,
    lr_at,
    train,
)

CFG = TrainConfig(epochs=5)


def test_lr_endpoints_exact():
    # 100 steps/epoch -> warmup 5 steps; 1000 total steps
    assert lr_at(0, 100, 1000, CFG) == 1e-4
    assert lr_at(5, 100, 1000, CFG) == 5e-4
    assert lr_at(999, 100, 1000, CFG) == 1e-5


def test_lr_cosine_midpoint():
    # choose totals so the midpoint lands exactly on a step: warmup 5,
    # remaining span 1000 -> midpoint at step 505
    total = 1006
    lr = lr_at(505, 100, total, CFG)
    expected = (5e-4 + 1e-5) / 2
    assert abs(lr - expected) / expected <= 1e-12


def test_lr_continuous_at_warmup_boundary():
    total = 400
    warmup = 5
    before = lr_at(warmup - 1, 100, total, CFG)
    at = lr_at(warmup, 100, total, CFG)
    t = 1 / (total - 1 - warmup)
    just_after = lr_at(warmup + 1, 100, total, CFG)
    assert at == 5e-4
    assert before < at
    expected_after = 1e-5 + (5e-4 - 1e-5) * (1 + math.cos(math.pi * t)) / 2
    assert just_after == pytest.approx(expected_after, rel=1e-15)


def test_lr_monotone_after_warmup():
    total = 300
    values = [lr_at(s, 100, total, CFG) for s in range(5, total)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_lr_warmup_linear():
    for step in range(6):
        expected = 1e-4 + (5e-4 - 1e-4) * step / 5
        assert lr_at(step, 100, 1000, CFG) == pytest.approx(expected, rel=1e-15)


def test_lr_rejects_bad_ranges():
    with pytest.raises(ScheduleError):
        lr_at(1000, 100, 1000, CFG)
    with pytest.raises(ScheduleError):
        lr_at(0, 100, 5, CFG)  # total <= warmup


def test_lr_tiny_epochs_have_one_warmup_step():
    # round(0.05 * 6) == 0 is clamped to a single warmup step
    assert lr_at(0, 6, 30, CFG) == 1e-4
    assert lr_at(1, 6, 30, CFG) == 5e-4


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_start=1e-3, lr_peak=5e-4)
    with pytest.raises(ValueError):
        TrainConfig(warmup_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


def test_sgd_step_closed_form():
    params = {"w": np.array([1.5], dtype=np.float64)}
    grads = {"w": np.array([0.25], dtype=np.float64)}
    SGD().step(params, grads, lr=0.1)
    assert params["w"][0] == 1.5 - 0.1 * 0.25


def test_adam_first_step_closed_form():
    # with bias correction, the first Adam step is -lr * g / (|g| + eps)
    params = {"w": np.array([2.0], dtype=np.float64)}
    grads = {"w": np.array([0.5], dtype=np.float64)}
    opt = Adam()
    opt.step(params, grads, lr=0.01)
    expected = 2.0 - 0.01 * 0.5 / (0.5 + opt.eps)
    assert params["w"][0] == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# the training loop on a small synthetic scene
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_scene():
    tracks, source = synth_tracks(3, 30, seed=17, n_videos=2, image_size=128, box_range=(24, 32))
    manifest = build_manifest(tracks, IngestConfig(min_box=20.0, resize_to=16))
    return manifest, source


def tiny_model_and_encoder(seed=0):
    encoder = ToyPatchEncoder(patch_size=8, d_model=24, seed=seed)
    cfg = RoVFConfig(d_model=24, n_latents=4, n_layers=1, n_heads=2, dropout=0.1, d_ff=32, out_dim=12)
    return init_model(cfg, seed=seed), encoder


def tiny_train_config(**overrides):
    base = dict(
        epochs=1,
        batch_triplets=3,
        optimizer="sgd",
        lr_start=1e-4,
        lr_peak=5e-4,
        lr_end=1e-5,
        j=4,
        k=4,
        seed=5,
        checkpoint_epochs=(),
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_freeze_encoder_contract(tiny_scene):
    manifest, source = tiny_scene
    model, encoder = tiny_model_and_encoder()
    before = {k: v.copy() for k, v in encoder.params.items()}
    result = train(
        manifest, manifest.cooccurrence, model, encoder,
        tiny_train_config(freeze_encoder=True), frame_source=source,
    )
    for name in before:
        np.testing.assert_array_equal(encoder.params[name], before[name])
    assert len(result.stats.rows) == 2  # 6 anchors in batches of 3


def test_zero_peak_lr_is_noop(tiny_scene):
    manifest, source = tiny_scene
    model, encoder = tiny_model_and_encoder()
    before = {k: v.copy() for k, v in model.params.items()}
    before.update({f"enc.{k}": v.copy() for k, v in encoder.params.items()})
    train(
        manifest, manifest.cooccurrence, model, encoder,
        tiny_train_config(lr_start=0.0, lr_peak=0.0, lr_end=0.0), frame_source=source,
    )
    for name, value in model.params.items():
        np.testing.assert_array_equal(value, before[name])
    for name, value in encoder.params.items():
        np.testing.assert_array_equal(value, before[f"enc.{name}"])


def test_training_updates_and_reproducibility(tiny_scene):
    manifest, source = tiny_scene

    def run():
        model, encoder = tiny_model_and_encoder(seed=2)
        result = train(
            manifest, manifest.cooccurrence, model, encoder,
            tiny_train_config(epochs=2), frame_source=source,
        )
        digest = b"".join(
            np.ascontiguousarray(model.params[n]).tobytes() for n in sorted(model.params)
        )
        return result, digest

    first, digest_a = run()
    second, digest_b = run()
    assert digest_a == digest_b
    assert first.stats.to_csv() == second.stats.to_csv()
    assert len(first.stats.epoch_mean_loss) == 2
    assert all(value >= 0 for value in first.stats.epoch_mean_loss)
    # parameters actually moved
    fresh_model, _ = tiny_model_and_encoder(seed=2)
    assert any(
        not np.array_equal(first.model.params[n], fresh_model.params[n])
        for n in fresh_model.params
    )


def test_stats_csv_schema(tiny_scene, tmp_path):
    manifest, source = tiny_scene
    model, encoder = tiny_model_and_encoder(seed=3)
    result = train(
        manifest, manifest.cooccurrence, model, encoder,
        tiny_train_config(), frame_source=source,
    )
    path = tmp_path / "stats.csv"
    result.stats.save_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,epoch,lr,loss,active_frac,d_ap,d_an"
    first = lines[1].split(",")
    assert int(first[0]) == 0 and int(first[1]) == 1
    assert float(first[3]) >= 0.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_byte_identical(tmp_path):
    model, encoder = tiny_model_and_encoder(seed=4)
    path_a = tmp_path / "a.rvck"
    save_checkpoint(path_a, model, encoder, seeds={"train_seed": 5}, meta={"epoch": 2})
    loaded_model, loaded_encoder, header = load_checkpoint(path_a)
    assert header["meta"]["epoch"] == 2
    assert loaded_model.cfg == model.cfg
    for name in model.params:
        np.testing.assert_array_equal(loaded_model.params[name], model.params[name])
    for name in encoder.params:
        np.testing.assert_array_equal(loaded_encoder.params[name], encoder.params[name])
    path_b = tmp_path / "b.rvck"
    save_checkpoint(path_b, loaded_model, loaded_encoder, seeds=header["seeds"], meta=header["meta"])
    assert path_a.read_bytes() == path_b.read_bytes()


def test_checkpoint_checksum_verified(tmp_path):
    model, encoder = tiny_model_and_encoder(seed=6)
    path = tmp_path / "ckpt.rvck"
    save_checkpoint(path, model, encoder)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.rvck"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)
