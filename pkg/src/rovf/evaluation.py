"""Query/gallery evaluation: set generation, ranking, top-k accuracy.

An evaluation set is two positive clips of one track plus nine negative
clips from co-occurring tracks. Each positive serves once as the query; the
gallery is the other positive plus the nine negatives (ten items), shuffled
by a seeded permutation so that degenerate embedders (e.g. a constant
vector) score at chance rather than inheriting the construction order.
Galleries are ranked by ascending Euclidean distance with ties broken toward
the lower gallery index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clips import EVAL_NEGATIVES, ClipManifest
from .metric import pairwise_distances
from .streams import derive
from .tracks import CoOccurrenceGraph

GALLERY_SIZE = EVAL_NEGATIVES + 1


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalSet:
    positives: tuple[int, int]
    negatives: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.positives) != 2 or len(self.negatives) != EVAL_NEGATIVES:
            raise EvalError(
                f"an eval set is 2 positives + {EVAL_NEGATIVES} negatives, got "
                f"{len(self.positives)} + {len(self.negatives)}"
            )
        clips = set(self.positives) | set(self.negatives)
        if len(clips) != 2 + EVAL_NEGATIVES:
            raise EvalError("eval set clips must be distinct")


def _clip_region(manifest: ClipManifest, clip_id: int) -> tuple[float, float, float, float]:
    """Union rectangle of a clip's crop squares, in source coordinates."""
    clip = manifest.clip(clip_id)
    half = clip.crop_side / 2.0
    xs = [c[0] for c in clip.crop_centers]
    ys = [c[1] for c in clip.crop_centers]
    return (min(xs) - half, min(ys) - half, max(xs) + half, max(ys) + half)


def _rect_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def generate_eval_sets(
    manifest: ClipManifest,
    graph: CoOccurrenceGraph,
    n_sets: int,
    rng: np.random.Generator,
    filter_overlap: bool = False,
    overlap_threshold: float = 0.5,
) -> list[EvalSet]:
    """Sample n_sets evaluation sets, deterministic in the generator state.

    The optional geometric filter (off by default) drops sets whose two
    positive clips cover heavily overlapping source regions, a proxy for
    visually trivial pairs; headline numbers are reported filter-free.
    """
    candidates = []
    for track_id in manifest.track_ids():
        own = manifest.clips_of_track(track_id)
        if len(own) < 2:
            continue
        pool: list[int] = []
        for neighbor in graph.neighbors(track_id):
            pool.extend(manifest.clips_of_track(neighbor))
        if len(pool) >= EVAL_NEGATIVES:
            candidates.append((track_id, own, sorted(pool)))
    if not candidates:
        raise EvalError(
            "insufficient data: no track has >= 2 clips plus "
            f">= {EVAL_NEGATIVES} co-occurring negative clips"
        )

    sets: list[EvalSet] = []
    attempts = 0
    max_attempts = max(50 * n_sets, 1000)
    while len(sets) < n_sets:
        if attempts >= max_attempts:
            raise EvalError(
                f"could not assemble {n_sets} sets after {attempts} draws "
                "(overlap filter rejected too many candidates)"
            )
        attempts += 1
        track_id, own, pool = candidates[int(rng.integers(len(candidates)))]
        positives = tuple(int(c) for c in rng.choice(own, size=2, replace=False))
        negatives = tuple(int(c) for c in rng.choice(pool, size=EVAL_NEGATIVES, replace=False))
        if filter_overlap:
            iou = _rect_iou(
                _clip_region(manifest, positives[0]), _clip_region(manifest, positives[1])
            )
            if iou > overlap_threshold:
                continue
        sets.append(EvalSet(positives=positives, negatives=negatives))
    return sets


def save_eval_sets(
    path: str | Path, sets: list[EvalSet], seed: int, filter_meta: dict | None = None
) -> None:
    from .clips import dump_canonical_json

    payload = {
        "sets": [
            {"positives": list(s.positives), "negatives": list(s.negatives)} for s in sets
        ],
        "seed": seed,
        "filter": filter_meta or {"enabled": False},
    }
    Path(path).write_text(dump_canonical_json(payload))


def load_eval_sets(path: str | Path) -> tuple[list[EvalSet], dict]:
    data = json.loads(Path(path).read_text())
    sets = [
        EvalSet(positives=tuple(s["positives"]), negatives=tuple(s["negatives"]))
        for s in data["sets"]
    ]
    return sets, data


def rank_gallery(query: np.ndarray, gallery: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Gallery indices sorted by ascending distance to the query.

    Equidistant entries keep their index order (stable sort).
    """
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[0] < 1:
        raise EvalError("gallery must be a non-empty matrix of embeddings")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (gallery.shape[1],):
        raise EvalError(f"query dim {query.shape} does not match gallery {gallery.shape}")
    if not (np.isfinite(query).all() and np.isfinite(gallery).all()):
        raise EvalError("non-finite embeddings in ranking")
    dists = pairwise_distances(query[None, :], gallery)[0]
    return np.argsort(dists, kind="stable")


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class EvalReport:
    n_sets: int
    n_queries: int
    top1: float
    top3: float
    top1_ci: tuple[float, float]
    top3_ci: tuple[float, float]
    ranks: list[tuple[int, int, int]] = field(default_factory=list)  # set_id, query_clip, rank
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_sets": self.n_sets,
            "n_queries": self.n_queries,
            "top1": self.top1,
            "top3": self.top3,
            "top1_ci": list(self.top1_ci),
            "top3_ci": list(self.top3_ci),
            "ranks": [list(r) for r in self.ranks],
            "metadata": self.metadata,
        }

    def save(self, path: str | Path) -> None:
        from .clips import dump_canonical_json

        Path(path).write_text(dump_canonical_json(self.to_json_dict()))

    def rank_table_csv(self) -> str:
        lines = ["set_id,query_clip,positive_rank"]
        lines += [f"{s},{q},{r}" for s, q, r in self.ranks]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        data = json.loads(Path(path).read_text())
        return cls(
            n_sets=data["n_sets"],
            n_queries=data["n_queries"],
            top1=data["top1"],
            top3=data["top3"],
            top1_ci=tuple(data["top1_ci"]),
            top3_ci=tuple(data["top3_ci"]),
            ranks=[tuple(r) for r in data["ranks"]],
            metadata=data.get("metadata", {}),
        )


def evaluate(sets: list[EvalSet], embed_clip, shuffle_seed: int = 0) -> EvalReport:
    """Top-1/top-3 over 2 queries per set, each against a 10-item gallery.

    ``embed_clip`` maps clip id -> embedding vector; failures propagate with
    the offending clip id. The gallery permutation for (set s, query q) is
    drawn from the documented stream (shuffle_seed, "eval-gallery", s, q).
    """
    if not sets:
        raise EvalError("no evaluation sets")
    cache: dict[int, np.ndarray] = {}

    def emb(clip_id: int) -> np.ndarray:
        if clip_id not in cache:
            try:
                cache[clip_id] = np.asarray(embed_clip(clip_id), dtype=np.float64)
            except Exception as exc:
                raise EvalError(f"embedding failed for clip {clip_id}: {exc}") from exc
        return cache[clip_id]

    top1_hits = 0
    top3_hits = 0
    ranks: list[tuple[int, int, int]] = []
    for set_id, eval_set in enumerate(sets):
        for q in (0, 1):
            query_clip = eval_set.positives[q]
            target_clip = eval_set.positives[1 - q]
            gallery_ids = [target_clip, *eval_set.negatives]
            perm = derive(shuffle_seed, "eval-gallery", set_id, q).permutation(GALLERY_SIZE)
            gallery_ids = [gallery_ids[i] for i in perm]
            gallery = np.stack([emb(c) for c in gallery_ids])
            order = rank_gallery(emb(query_clip), gallery)
            target_pos = gallery_ids.index(target_clip)
            rank = int(np.where(order == target_pos)[0][0]) + 1
            ranks.append((set_id, query_clip, rank))
            top1_hits += rank == 1
            top3_hits += rank <= 3

    n_queries = 2 * len(sets)
    return EvalReport(
        n_sets=len(sets),
        n_queries=n_queries,
        top1=top1_hits / n_queries,
        top3=top3_hits / n_queries,
        top1_ci=wilson_interval(top1_hits, n_queries),
        top3_ci=wilson_interval(top3_hits, n_queries),
        ranks=ranks,
        metadata={
            "shuffle_seed": shuffle_seed,
            "gallery_size": GALLERY_SIZE,
            "negatives_policy": "sampled without replacement over clips; "
            "multiple clips may share a negative track",
        },
    )
