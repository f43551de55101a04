"""Co-occurrence-constrained candidate sampling and hard triplet selection.

Without identity labels, negatives must come from tracks that share at least
one frame with the anchor track (two tracks in one frame are necessarily
different individuals). Hard selection inside a sampled candidate set:

  1. the positive pair is the two positive clips with the largest embedding
     distance from each other,
  2. the negative is the candidate closest to either of those two positives
     (min of the two distances),
  3. the anchor is whichever positive sits closer to that negative.

All argmin/argmax ties break toward the lowest index. The distance is the
shared Euclidean metric from :mod:`rovf.metric` - the same one the loss and
the evaluation ranking use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clips import MIN_ANCHOR_CLIPS, ClipManifest
from .metric import pairwise_distances
from .tracks import CoOccurrenceGraph


class MiningError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSet:
    anchor_track: int
    positives: tuple[int, ...]  # clip ids of the anchor track
    negatives: tuple[int, ...]  # clip ids of co-occurring tracks


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class MinedTriplet:
    triplet: Triplet
    candidates: CandidateSet
    d_ap: float
    d_an: float


def eligible_anchor_tracks(manifest: ClipManifest, graph: CoOccurrenceGraph) -> list[int]:
    """Tracks usable as anchors: >= MIN_ANCHOR_CLIPS clips and >= 1 negative clip."""
    out = []
    for track_id in manifest.track_ids():
        if len(manifest.clips_of_track(track_id)) < MIN_ANCHOR_CLIPS:
            continue
        if any(manifest.clips_of_track(n) for n in graph.neighbors(track_id)):
            out.append(track_id)
    return out


def sample_candidates(
    manifest: ClipManifest,
    graph: CoOccurrenceGraph,
    j: int,
    k: int,
    rng: np.random.Generator,
    anchor_track: int | None = None,
) -> CandidateSet:
    """Draw up to j positives and up to k negatives for one anchor track.

    The anchor track is chosen uniformly among eligible tracks unless given
    explicitly (the trainer schedules anchors itself so each is visited once
    per epoch). Sampling is without replacement on both sides.
    """
    if j < 2 or k < 1:
        raise MiningError("need j >= 2 and k >= 1")
    eligible = eligible_anchor_tracks(manifest, graph)
    if not eligible:
        raise MiningError(
            "ineligible dataset: no track has enough clips plus a co-occurring clip to mine from"
        )
    if anchor_track is None:
        anchor_track = int(eligible[int(rng.integers(len(eligible)))])
    elif anchor_track not in eligible:
        raise MiningError(f"track {anchor_track} is not an eligible anchor")

    own = manifest.clips_of_track(anchor_track)
    pool: list[int] = []
    for neighbor in graph.neighbors(anchor_track):
        pool.extend(manifest.clips_of_track(neighbor))
    pool.sort()

    n_pos = min(j, len(own))
    n_neg = min(k, len(pool))
    positives = sorted(int(c) for c in rng.choice(own, size=n_pos, replace=False))
    negatives = sorted(int(c) for c in rng.choice(pool, size=n_neg, replace=False))
    return CandidateSet(
        anchor_track=anchor_track, positives=tuple(positives), negatives=tuple(negatives)
    )


def mine_hard_triplet(pos_emb: np.ndarray, neg_emb: np.ndarray) -> tuple[int, int, int]:
    """Select (anchor, positive, negative) indices within the candidate set.

    Returns indices into pos_emb (anchor, positive) and neg_emb (negative).
    """
    pos_emb = np.asarray(pos_emb, dtype=np.float64)
    neg_emb = np.asarray(neg_emb, dtype=np.float64)
    if pos_emb.ndim != 2 or pos_emb.shape[0] < 2:
        raise MiningError("need at least two positive embeddings")
    if neg_emb.ndim != 2 or neg_emb.shape[0] < 1:
        raise MiningError("need at least one negative embedding")
    if not (np.isfinite(pos_emb).all() and np.isfinite(neg_emb).all()):
        raise MiningError("non-finite embeddings in candidate set")

    pos_dists = pairwise_distances(pos_emb, pos_emb)
    best_pair = (0, 1)
    best_d = -1.0
    n_pos = pos_emb.shape[0]
    for i in range(n_pos):
        for j_idx in range(i + 1, n_pos):
            if pos_dists[i, j_idx] > best_d:
                best_d = pos_dists[i, j_idx]
                best_pair = (i, j_idx)
    p1, p2 = best_pair

    neg_dists = pairwise_distances(pos_emb[[p1, p2]], neg_emb)
    hardness = np.minimum(neg_dists[0], neg_dists[1])
    n_star = int(np.argmin(hardness))  # argmin keeps the lowest index on ties

    anchor, positive = (p1, p2) if neg_dists[0, n_star] <= neg_dists[1, n_star] else (p2, p1)
    return anchor, positive, n_star


def mine_candidate_set(
    candidates: CandidateSet,
    pos_emb: np.ndarray,
    neg_emb: np.ndarray,
) -> MinedTriplet:
    """Map in-set hard indices back to clip ids, recording the distances."""
    a_idx, p_idx, n_idx = mine_hard_triplet(pos_emb, neg_emb)
    d_ap = float(pairwise_distances(pos_emb[[a_idx]], pos_emb[[p_idx]])[0, 0])
    d_an = float(pairwise_distances(pos_emb[[a_idx]], neg_emb[[n_idx]])[0, 0])
    return MinedTriplet(
        triplet=Triplet(
            anchor=candidates.positives[a_idx],
            positive=candidates.positives[p_idx],
            negative=candidates.negatives[n_idx],
        ),
        candidates=candidates,
        d_ap=d_ap,
        d_an=d_an,
    )


def build_batch(
    manifest: ClipManifest,
    graph: CoOccurrenceGraph,
    embed_clip,
    batch_triplets: int,
    rng: np.random.Generator,
    j: int = 20,
    k: int = 20,
    anchor_tracks: "list[int] | None" = None,
) -> list[MinedTriplet]:
    """Sample candidate sets, embed them (mining mode), and mine triplets.

    ``embed_clip`` maps a clip id to its embedding; callers pass a closure
    that runs the encoder+head with dropout disabled so selection is
    deterministic given parameters.
    """
    if batch_triplets < 1:
        raise MiningError("batch_triplets must be >= 1")
    if anchor_tracks is None:
        anchors: list[int | None] = [None] * batch_triplets
    else:
        if len(anchor_tracks) != batch_triplets:
            raise MiningError("anchor_tracks length must equal batch_triplets")
        anchors = list(anchor_tracks)
    batch = []
    for anchor in anchors:
        cs = sample_candidates(manifest, graph, j, k, rng, anchor_track=anchor)
        pos_emb = np.stack([embed_clip(c) for c in cs.positives])
        neg_emb = np.stack([embed_clip(c) for c in cs.negatives])
        batch.append(mine_candidate_set(cs, pos_emb, neg_emb))
    return batch
