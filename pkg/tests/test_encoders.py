from __future__ import annotations

import numpy as np
import pytest

from rovf.encoders import (
    EmbeddingFormatError,
    EmbeddingStore,
    EncoderError,
    PrecomputedEncoder,
    ToyPatchEncoder,
    average_baseline,
    first_frame_baseline,
    import_embeddings,
    sinusoidal_positions,
    write_embeddings,
)


def test_token_count_224_patch16():
    # (224 / 16)^2 = 196 tokens
    enc = ToyPatchEncoder(patch_size=16, d_model=768, seed=0)
    frame = np.random.default_rng(0).random((3, 224, 224)).astype(np.float32)
    tokens = enc.encode_frame(frame)
    assert tokens.shape == (196, 768)
    assert np.isfinite(tokens).all()


def test_zero_frame_zero_projection_gives_positions():
    enc = ToyPatchEncoder(patch_size=8, d_model=32, seed=0)
    enc.params["patch.w"][:] = 0.0
    frame = np.zeros((3, 32, 32), dtype=np.float32)
    tokens = enc.encode_frame(frame)
    expected = sinusoidal_positions(16, 32).astype(np.float32)
    np.testing.assert_array_equal(tokens, expected)


def test_encoder_deterministic():
    enc = ToyPatchEncoder(patch_size=8, d_model=32, seed=3)
    frame = np.random.default_rng(1).random((3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(enc.encode_frame(frame), enc.encode_frame(frame))
    enc_again = ToyPatchEncoder(patch_size=8, d_model=32, seed=3)
    np.testing.assert_array_equal(
        enc.params["patch.w"], enc_again.params["patch.w"]
    )


def test_every_patch_influences_its_token():
    rng = np.random.default_rng(2)
    enc = ToyPatchEncoder(patch_size=8, d_model=32, seed=1)
    frame = rng.random((3, 32, 32)).astype(np.float32)
    base = enc.encode_frame(frame)
    n_side = 32 // 8
    for trial in range(10):
        py, px = int(rng.integers(n_side)), int(rng.integers(n_side))
        bumped = frame.copy()
        bumped[:, py * 8 : (py + 1) * 8, px * 8 : (px + 1) * 8] += rng.random((3, 8, 8)).astype(
            np.float32
        )
        tokens = enc.encode_frame(bumped)
        assert not np.array_equal(tokens, base)
        changed = np.where(np.any(tokens != base, axis=1))[0]
        assert changed.tolist() == [py * n_side + px]


def test_indivisible_frame_rejected():
    enc = ToyPatchEncoder(patch_size=16, d_model=32, seed=0)
    with pytest.raises(EncoderError, match="not divisible"):
        enc.encode_frame(np.zeros((3, 40, 40), dtype=np.float32))


def test_clip_encoding_matches_per_frame():
    enc = ToyPatchEncoder(patch_size=8, d_model=32, seed=5)
    block = np.random.default_rng(3).random((4, 3, 32, 32)).astype(np.float32)
    clip_tokens = enc.encode_clip(block)
    for f in range(4):
        np.testing.assert_array_equal(clip_tokens[f], enc.encode_frame(block[f]))


# ---------------------------------------------------------------------------
# averaging baseline
# ---------------------------------------------------------------------------

def test_single_frame_single_token_identity():
    v = np.array([[1.5, -2.0, 0.25]])
    np.testing.assert_array_equal(average_baseline([v]), v[0])


def test_two_frame_mean():
    u = np.array([[1.0, 3.0], [3.0, 5.0]])  # frame mean (2, 4)
    w = np.array([[4.0, 0.0]])  # frame mean (4, 0)
    np.testing.assert_allclose(average_baseline([u, w]), [3.0, 2.0], rtol=0, atol=0)


def test_frame_order_invariance_exact():
    rng = np.random.default_rng(7)
    frames = [rng.random((13, 24)) for _ in range(9)]
    base = average_baseline(frames)
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(len(frames))
        shuffled = [frames[i] for i in perm]
        np.testing.assert_array_equal(average_baseline(shuffled), base)


def test_token_order_invariance_exact():
    rng = np.random.default_rng(8)
    frames = [rng.random((17, 12)) for _ in range(4)]
    base = average_baseline(frames)
    shuffled = [f[np.random.default_rng(i).permutation(f.shape[0])] for i, f in enumerate(frames)]
    np.testing.assert_array_equal(average_baseline(shuffled), base)


def test_empty_rejected():
    with pytest.raises(EncoderError):
        average_baseline([])


def test_first_frame_baseline_uses_only_first():
    rng = np.random.default_rng(9)
    frames = [rng.random((5, 6)) for _ in range(3)]
    out = first_frame_baseline(frames)
    np.testing.assert_array_equal(out, average_baseline([frames[0]]))
    frames[1][:] = 99.0
    np.testing.assert_array_equal(first_frame_baseline(frames), out)


# ---------------------------------------------------------------------------
# binary embedding store
# ---------------------------------------------------------------------------

def random_store(rng, d_model=6):
    clips = {
        int(cid): rng.random((int(rng.integers(1, 5)), int(rng.integers(1, 4)), d_model)).astype(
            np.float32
        )
        for cid in rng.choice(1000, size=5, replace=False)
    }
    return EmbeddingStore(d_model=d_model, clips=clips)


def test_store_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    store = random_store(rng)
    path = tmp_path / "emb.bin"
    write_embeddings(path, store)
    loaded = import_embeddings(path)
    assert loaded.d_model == store.d_model
    assert loaded.clip_ids() == store.clip_ids()
    for cid in store.clip_ids():
        np.testing.assert_array_equal(loaded.clips[cid], store.clips[cid])
    # writing the loaded store reproduces the file byte for byte
    again = tmp_path / "emb2.bin"
    write_embeddings(again, loaded)
    assert again.read_bytes() == path.read_bytes()


def test_store_canonical_order(tmp_path):
    a = EmbeddingStore(d_model=2, clips={5: np.zeros((1, 1, 2), np.float32), 2: np.ones((1, 1, 2), np.float32)})
    b = EmbeddingStore(d_model=2, clips={2: np.ones((1, 1, 2), np.float32), 5: np.zeros((1, 1, 2), np.float32)})
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    write_embeddings(pa, a)
    write_embeddings(pb, b)
    assert pa.read_bytes() == pb.read_bytes()
    assert import_embeddings(pa).clip_ids() == [2, 5]


def test_truncated_payload_rejected(tmp_path):
    store = EmbeddingStore(d_model=3, clips={1: np.ones((10, 2, 3), np.float32)})
    path = tmp_path / "emb.bin"
    write_embeddings(path, store)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 24])  # drop one frame worth of floats
    with pytest.raises(EmbeddingFormatError, match="truncated payload"):
        import_embeddings(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "emb.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(EmbeddingFormatError, match="bad magic"):
        import_embeddings(path)
    store = EmbeddingStore(d_model=2, clips={0: np.zeros((1, 1, 2), np.float32)})
    write_embeddings(path, store)
    data = bytearray(path.read_bytes())
    data[4] = 9  # version
    path.write_bytes(bytes(data))
    with pytest.raises(EmbeddingFormatError, match="unsupported version"):
        import_embeddings(path)


def test_precomputed_encoder_lookup():
    store = EmbeddingStore(d_model=4, clips={3: np.ones((2, 5, 4), np.float32)})
    enc = PrecomputedEncoder(store)
    tokens = enc.encode_clip(3, 2)
    assert tokens.shape == (2, 5, 4)
    with pytest.raises(EncoderError, match="no embeddings stored for clip 9"):
        enc.encode_clip(9, 2)
    with pytest.raises(EncoderError, match="store has 2 frames"):
        enc.encode_clip(3, 10)
    assert store.frame(3, 1).shape == (5, 4)
    with pytest.raises(EncoderError, match="frame position"):
        store.frame(3, 7)
