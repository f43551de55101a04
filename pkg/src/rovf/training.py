"""Optimization: the warmup+cosine schedule, optimizers, and the train loop.

One epoch visits every eligible anchor track exactly once in a seeded
shuffled order, grouped into batches of ``batch_triplets`` candidate sets.
Each batch is mined with dropout disabled, then the three clips of every
mined triplet are re-embedded in train mode; the update is one optimizer
step on the mean triplet loss of the batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .clips import ClipManifest
from .embedder import ClipEmbedder
from .mining import build_batch, eligible_anchor_tracks
from .model import RoVFModel, rovf_backward, triplet_loss_with_grad
from .streams import derive
from .tracks import CoOccurrenceGraph

STATS_HEADER = "step,epoch,lr,loss,active_frac,d_ap,d_an"


class ScheduleError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_triplets: int = 10
    margin: float = 1.0
    lr_start: float = 1e-4
    lr_peak: float = 5e-4
    lr_end: float = 1e-5
    warmup_fraction: float = 0.05
    seed: int = 0
    freeze_encoder: bool = False
    optimizer: str = "sgd"
    j: int = 20
    k: int = 20
    grad_clip: float = 0.0  # 0 disables clipping
    checkpoint_epochs: tuple[int, ...] = (5, 10)

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_triplets < 1:
            raise ValueError("epochs and batch_triplets must be >= 1")
        if not (self.lr_start <= self.lr_peak and self.lr_end <= self.lr_peak):
            raise ValueError("need lr_start <= lr_peak and lr_end <= lr_peak")
        if not (0.0 < self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_triplets": self.batch_triplets,
            "margin": self.margin,
            "lr_start": self.lr_start,
            "lr_peak": self.lr_peak,
            "lr_end": self.lr_end,
            "warmup_fraction": self.warmup_fraction,
            "seed": self.seed,
            "freeze_encoder": self.freeze_encoder,
            "optimizer": self.optimizer,
            "j": self.j,
            "k": self.k,
            "grad_clip": self.grad_clip,
            "checkpoint_epochs": list(self.checkpoint_epochs),
        }


def lr_at(step: int, steps_per_epoch: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to the final rate.

    Warmup spans round(warmup_fraction * steps_per_epoch) steps, at least
    one; the peak is hit exactly at warmup end and the end rate exactly at
    the final step.
    """
    if not 0 <= step < total_steps:
        raise ScheduleError(f"step {step} outside [0, {total_steps})")
    warmup_steps = max(1, round(cfg.warmup_fraction * steps_per_epoch))
    if total_steps <= warmup_steps:
        raise ScheduleError(
            f"total_steps {total_steps} must exceed warmup_steps {warmup_steps}"
        )
    if step < warmup_steps:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * (step / warmup_steps)
    if step == warmup_steps:
        return cfg.lr_peak
    t = (step - warmup_steps) / (total_steps - 1 - warmup_steps)
    return cfg.lr_end + (cfg.lr_peak - cfg.lr_end) * (1.0 + math.cos(math.pi * t)) / 2.0


class SGD:
    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name in sorted(params):
            params[name] -= lr * grads[name]


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(params[name]))
            v = self.v.setdefault(name, np.zeros_like(params[name]))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(name: str):
    return SGD() if name == "sgd" else Adam()


@dataclass
class TrainStats:
    rows: list[tuple] = field(default_factory=list)  # (step, epoch, lr, loss, active, d_ap, d_an)
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_time_s: list[float] = field(default_factory=list)

    def add_row(self, step, epoch, lr, loss, active, d_ap, d_an) -> None:
        self.rows.append((step, epoch, lr, loss, active, d_ap, d_an))

    def to_csv(self) -> str:
        lines = [STATS_HEADER]
        for step, epoch, lr, loss, active, d_ap, d_an in self.rows:
            lines.append(
                f"{step},{epoch},{lr!r},{loss!r},{active!r},{d_ap!r},{d_an!r}"
            )
        return "\n".join(lines) + "\n"

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class TrainResult:
    model: RoVFModel
    encoder: object
    stats: TrainStats
    checkpoints: dict[str, Path] = field(default_factory=dict)


def _chunked(seq: list, size: int) -> list[list]:
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def train(
    manifest: ClipManifest,
    graph: CoOccurrenceGraph,
    model: RoVFModel,
    encoder,
    cfg: TrainConfig,
    frame_source=None,
    out_dir: str | Path | None = None,
    triplet_log: list | None = None,
) -> TrainResult:
    """Optimize the head (and encoder unless frozen) with mined triplets."""
    embedder = ClipEmbedder(manifest, encoder, model, frame_source=frame_source)
    eligible = eligible_anchor_tracks(manifest, graph)
    if not eligible:
        raise ValueError("dataset has no eligible anchor tracks; nothing to train on")

    freeze_encoder = cfg.freeze_encoder or not getattr(encoder, "trainable", False)
    named_params = {f"rovf.{k}": v for k, v in model.params.items()}
    if not freeze_encoder:
        named_params.update({f"enc.{k}": v for k, v in encoder.params.items()})

    steps_per_epoch = math.ceil(len(eligible) / cfg.batch_triplets)
    total_steps = steps_per_epoch * cfg.epochs
    optimizer = make_optimizer(cfg.optimizer)
    stats = TrainStats()
    checkpoints: dict[str, Path] = {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        order = [eligible[i] for i in derive(cfg.seed, "epoch-order", epoch).permutation(len(eligible))]
        epoch_losses: list[float] = []
        for batch_idx, anchors in enumerate(_chunked(order, cfg.batch_triplets)):
            rng_mine = derive(cfg.seed, "mine", epoch, batch_idx)
            mined = build_batch(
                manifest,
                graph,
                lambda cid: embedder.embed(cid),
                len(anchors),
                rng_mine,
                j=cfg.j,
                k=cfg.k,
                anchor_tracks=anchors,
            )
            rng_drop = derive(cfg.seed, "dropout", epoch, batch_idx)
            grads_model = model.zero_grads()
            grads_enc = {k: np.zeros_like(v) for k, v in encoder.params.items()} if not freeze_encoder else {}
            batch_losses, d_aps, d_ans, n_active = [], [], [], 0
            scale = 1.0 / len(mined)
            for mt in mined:
                trip = mt.triplet
                forward = {}
                for role, cid in (("a", trip.anchor), ("p", trip.positive), ("n", trip.negative)):
                    forward[role] = embedder.embed_with_caches(cid, train=True, rng=rng_drop)
                loss, (da, dp, dn), (d_ap, d_an) = triplet_loss_with_grad(
                    forward["a"][0], forward["p"][0], forward["n"][0], cfg.margin
                )
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} batch {batch_idx} "
                        f"triplet (a={trip.anchor}, p={trip.positive}, n={trip.negative})"
                    )
                batch_losses.append(loss)
                d_aps.append(d_ap)
                d_ans.append(d_an)
                if triplet_log is not None:
                    triplet_log.append(
                        (epoch, batch_idx, trip.anchor, trip.positive, trip.negative, d_ap, d_an)
                    )
                if loss <= 0.0:
                    continue
                n_active += 1
                for role, demb in (("a", da), ("p", dp), ("n", dn)):
                    _, head_caches, enc_cache = forward[role]
                    _, dtokens = rovf_backward(model, head_caches, demb * scale, grads=grads_model)
                    if not freeze_encoder and enc_cache is not None:
                        enc_grads = encoder.backward(np.stack(dtokens), enc_cache)
                        for name, g in enc_grads.items():
                            grads_enc[name] += g

            named_grads = {f"rovf.{k}": v for k, v in grads_model.items()}
            named_grads.update({f"enc.{k}": v for k, v in grads_enc.items()})
            if cfg.grad_clip > 0.0:
                norm = _global_norm(named_grads)
                if norm > cfg.grad_clip:
                    factor = cfg.grad_clip / norm
                    for g in named_grads.values():
                        g *= factor
            lr = lr_at(step, steps_per_epoch, total_steps, cfg)
            optimizer.step(named_params, named_grads, lr)

            mean_loss = float(np.mean(batch_losses))
            stats.add_row(
                step,
                epoch,
                lr,
                mean_loss,
                n_active / len(mined),
                float(np.mean(d_aps)),
                float(np.mean(d_ans)),
            )
            epoch_losses.extend(batch_losses)
            step += 1

        stats.epoch_mean_loss.append(float(np.mean(epoch_losses)))
        stats.epoch_time_s.append(time.perf_counter() - epoch_start)

        if out_dir is not None and epoch in cfg.checkpoint_epochs:
            path = out_dir / f"ckpt_epoch{epoch:03d}.rvck"
            save_checkpoint(
                path,
                model,
                encoder,
                seeds={"train_seed": cfg.seed},
                meta={"epoch": epoch},
            )
            checkpoints[f"epoch{epoch}"] = path

    if out_dir is not None:
        path = out_dir / "ckpt_final.rvck"
        save_checkpoint(
            path,
            model,
            encoder,
            seeds={"train_seed": cfg.seed},
            meta={"epoch": cfg.epochs},
        )
        checkpoints["final"] = path
        stats.save_csv(out_dir / "stats.csv")

    return TrainResult(model=model, encoder=encoder, stats=stats, checkpoints=checkpoints)
