from __future__ import annotations

import math

import numpy as np
import pytest

from rovf import metric, mining
from rovf.mining import (
    MiningError,
    build_batch,
    eligible_anchor_tracks,
    mine_hard_triplet,
    sample_candidates,
)
from rovf.streams import derive
from tests.conftest import structural_manifest


def brute_force_hard_triplet(pos, neg):
    """Independent re-derivation of the selection rule with scalar loops."""
    n_pos, n_neg = len(pos), len(neg)
    best_pair, best_d = None, -1.0
    for i in range(n_pos):
        for j in range(i + 1, n_pos):
            d = math.dist(pos[i], pos[j])
            if d > best_d:
                best_d, best_pair = d, (i, j)
    p1, p2 = best_pair
    best_n, best_nd = None, float("inf")
    for k in range(n_neg):
        d = min(math.dist(pos[p1], neg[k]), math.dist(pos[p2], neg[k]))
        if d < best_nd:
            best_nd, best_n = d, k
    if math.dist(pos[p1], neg[best_n]) <= math.dist(pos[p2], neg[best_n]):
        return p1, p2, best_n
    return p2, p1, best_n


def test_spec_example_one_dimension():
    pos = np.array([[0.0], [1.0], [0.3]])
    neg = np.array([[0.9], [5.0]])
    anchor, positive, negative = mine_hard_triplet(pos, neg)
    # hardest pair (0.0, 1.0); nearest negative 0.9; 1.0 is closer so it anchors
    assert (anchor, positive, negative) == (1, 0, 0)


def test_tie_equal_positives_anchor_lowest_index():
    v = np.array([1.0, 2.0])
    pos = np.stack([v, v])
    neg = np.array([[5.0, 5.0]])
    anchor, positive, negative = mine_hard_triplet(pos, neg)
    assert (anchor, positive, negative) == (0, 1, 0)


def test_all_embeddings_equal_degenerate():
    pos = np.zeros((4, 3))
    neg = np.zeros((2, 3))
    anchor, positive, negative = mine_hard_triplet(pos, neg)
    assert (anchor, positive, negative) == (0, 1, 0)


def test_requires_two_positives_one_negative():
    with pytest.raises(MiningError):
        mine_hard_triplet(np.zeros((1, 2)), np.zeros((3, 2)))
    with pytest.raises(MiningError):
        mine_hard_triplet(np.zeros((3, 2)), np.zeros((0, 2)))


def test_non_finite_rejected():
    pos = np.array([[0.0], [np.inf]])
    with pytest.raises(MiningError, match="non-finite"):
        mine_hard_triplet(pos, np.zeros((1, 1)))


def test_matches_brute_force_oracle_thousand_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n_pos = int(rng.integers(2, 21))
        n_neg = int(rng.integers(1, 21))
        dim = int(rng.integers(1, 17))
        pos = rng.normal(size=(n_pos, dim))
        neg = rng.normal(size=(n_neg, dim))
        assert mine_hard_triplet(pos, neg) == brute_force_hard_triplet(pos, neg)


def test_scale_invariance_of_selection():
    rng = np.random.default_rng(3)
    for scale in (1e-3, 0.5, 7.0, 1e4):
        pos = rng.normal(size=(8, 5))
        neg = rng.normal(size=(6, 5))
        assert mine_hard_triplet(pos, neg) == mine_hard_triplet(pos * scale, neg * scale)


def test_mining_uses_the_shared_metric():
    assert mining.pairwise_distances is metric.pairwise_distances


# ---------------------------------------------------------------------------
# candidate sampling
# ---------------------------------------------------------------------------

def two_track_manifest(clips_per_track=5):
    return structural_manifest(n_videos=1, tracks_per_video=2, clips_per_track=clips_per_track)


def test_candidates_capped_by_availability():
    manifest = two_track_manifest(clips_per_track=5)
    cs = sample_candidates(manifest, manifest.cooccurrence, 20, 20, derive(0, "m"))
    assert len(cs.positives) == 5
    assert len(cs.negatives) == 5
    own = set(manifest.clips_of_track(cs.anchor_track))
    assert set(cs.positives) <= own
    assert not set(cs.negatives) & own


def test_single_track_ineligible():
    manifest = structural_manifest(n_videos=1, tracks_per_video=1)
    with pytest.raises(MiningError, match="ineligible dataset"):
        sample_candidates(manifest, manifest.cooccurrence, 20, 20, derive(0, "m"))


def test_candidate_sampling_deterministic():
    manifest = structural_manifest()
    a = sample_candidates(manifest, manifest.cooccurrence, 6, 6, derive(9, "mine", 0))
    b = sample_candidates(manifest, manifest.cooccurrence, 6, 6, derive(9, "mine", 0))
    assert a == b


def test_anchor_eligibility_excludes_small_tracks():
    manifest = structural_manifest(n_videos=1, tracks_per_video=3, clips_per_track=12)
    graph = manifest.cooccurrence
    # all three have 12 clips -> eligible
    assert eligible_anchor_tracks(manifest, graph) == [0, 1, 2]
    # rebuild a manifest where one track has < 3 clips
    from rovf.clips import IngestConfig, build_manifest
    from tests.conftest import make_track

    tracks = [
        make_track(0, n_frames=50, size=90.0),
        make_track(1, n_frames=14, size=90.0),  # 2 clips only
    ]
    small = build_manifest(tracks, IngestConfig(resize_to=32, min_box=40.0))
    assert len(small.clips_of_track(1)) == 2
    assert eligible_anchor_tracks(small, small.cooccurrence) == [0]
    cs = sample_candidates(small, small.cooccurrence, 20, 20, derive(0, "m"))
    assert cs.anchor_track == 0
    # the short track still contributes negatives
    assert set(cs.negatives) == set(small.clips_of_track(1))


def test_build_batch_shapes_and_determinism():
    manifest = structural_manifest()
    graph = manifest.cooccurrence

    def embed(clip_id: int):
        return derive(4, "emb", clip_id).normal(size=6)

    batch = build_batch(manifest, graph, embed, 10, derive(1, "mine"), j=6, k=6)
    assert len(batch) == 10
    slots = [(t.triplet.anchor, t.triplet.positive, t.triplet.negative) for t in batch]
    assert len(slots) * 3 == 30
    again = build_batch(manifest, graph, embed, 10, derive(1, "mine"), j=6, k=6)
    assert slots == [(t.triplet.anchor, t.triplet.positive, t.triplet.negative) for t in again]

    unit = build_batch(manifest, graph, embed, 1, derive(2, "mine"), j=6, k=6)
    assert len(unit) == 1


def test_mined_triplet_invariants():
    manifest = structural_manifest()
    graph = manifest.cooccurrence

    def embed(clip_id: int):
        return derive(8, "emb", clip_id).normal(size=4)

    for mt in build_batch(manifest, graph, embed, 8, derive(3, "mine"), j=5, k=5):
        trip = mt.triplet
        anchor_track = manifest.clip(trip.anchor).track_id
        positive_track = manifest.clip(trip.positive).track_id
        negative_track = manifest.clip(trip.negative).track_id
        assert anchor_track == positive_track
        assert negative_track != anchor_track
        assert graph.has_edge(anchor_track, negative_track)
        assert mt.d_ap >= 0 and mt.d_an >= 0
