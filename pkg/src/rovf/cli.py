"""Command-line pipeline: synth, ingest, train, embed, eval, report.

Heavy imports happen inside the command handlers so that ``--threads`` can
cap BLAS/numba pools before numpy loads. All randomness flows from the
single ``--seed`` flag through named streams (see :mod:`rovf.streams`);
every command writes a ``*.run.json`` manifest recording its config, input
and output checksums, and wall time. Exit codes: 0 on success, 2 on usage or
validation errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path


class CLIError(Exception):
    pass


_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# config-file keys (flat key=value) and the subcommand flag each one feeds
_CONFIG_KEYS = {
    "clip_seconds", "fps", "stagger_seconds", "min_box", "resize_to", "source_fps",
    "n_identities", "duration_s", "n_videos", "image_size", "box_min", "box_max",
    "epochs", "batch_triplets", "margin", "lr_start", "lr_peak", "lr_end",
    "warmup_fraction", "freeze_encoder", "optimizer", "j", "k", "grad_clip",
    "checkpoint_epochs", "d_model", "n_latents", "n_layers", "n_heads", "dropout",
    "d_ff", "out_dim", "patch_size", "sets", "shuffle_seed", "seed", "threads",
}


def _sha256_file(path: Path) -> str:
    hasher = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def _sha256_tree(root: Path) -> str:
    hasher = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        hasher.update(str(path.relative_to(root)).encode())
        hasher.update(bytes.fromhex(_sha256_file(path)))
    return hasher.hexdigest()


def _hash_entry(path: Path) -> dict:
    digest = _sha256_tree(path) if path.is_dir() else _sha256_file(path)
    return {"path": str(path), "sha256": digest}


def write_run_manifest(
    path: Path,
    command: str,
    seed: int,
    config: dict,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    wall_time_s: float,
    extra: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {name: _hash_entry(p) for name, p in inputs.items()},
        "outputs": {name: _hash_entry(p) for name, p in outputs.items()},
        "wall_time_s": wall_time_s,
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def verify_artifact(path: Path) -> None:
    """Check an input against the checksum its producing run recorded."""
    if not path.exists():
        raise CLIError(f"input artifact not found: {path}")
    candidates = [path.parent / (path.name + ".run.json")]
    candidates += sorted(p for p in path.parent.glob("*.run.json") if p not in candidates)
    for manifest_path in candidates:
        if not manifest_path.exists():
            continue
        try:
            recorded = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            continue
        for entry in recorded.get("outputs", {}).values():
            if Path(entry["path"]).resolve() == path.resolve():
                actual = _sha256_tree(path) if path.is_dir() else _sha256_file(path)
                if actual != entry["sha256"]:
                    raise CLIError(
                        f"checksum mismatch for {path} (recorded in {manifest_path.name})"
                    )
                return


def _parse_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise CLIError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise CLIError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _inject_config(argv: list[str]) -> list[str]:
    """Expand --config by inserting its pairs as flags after the subcommand.

    Explicit command-line flags still win because argparse keeps the last
    occurrence; config keys a subcommand does not define are skipped.
    """
    if not argv or argv[0].startswith("-"):
        return argv
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise CLIError("--config requires a path")
    values = _parse_config_file(Path(argv[idx + 1]))
    known = _SUBCOMMAND_FLAGS.get(argv[0], set())
    injected: list[str] = []
    for key, value in sorted(values.items()):
        flag = "--" + key.replace("_", "-")
        if flag not in known:
            continue
        if key in _STORE_TRUE_KEYS:
            if value.lower() in ("1", "true", "yes"):
                injected.append(flag)
        else:
            injected.extend([flag, value])
    return [argv[0], *injected, *argv[1:]]


def _apply_threads(argv: list[str]) -> None:
    if "--threads" not in argv:
        return
    idx = argv.index("--threads")
    if idx + 1 >= len(argv):
        return
    try:
        n = int(argv[idx + 1])
    except ValueError:
        return
    if n > 0:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, str(n))
        os.environ.setdefault("NUMBA_NUM_THREADS", str(n))


_STORE_TRUE_KEYS = {"freeze_encoder"}
_SUBCOMMAND_FLAGS: dict[str, set[str]] = {}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="root seed; all streams derive from it")
    parser.add_argument("--threads", type=int, default=0, help="cap BLAS/numba thread pools (0 = library default)")
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rovf",
        description="Label-free video re-identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic track dataset (frames + CSV)")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--n-identities", type=int, default=10)
    p.add_argument("--duration-s", type=int, default=60)
    p.add_argument("--n-videos", type=int, default=1)
    p.add_argument("--image-size", type=int, default=304)
    p.add_argument("--box-min", type=float, default=72.0)
    p.add_argument("--box-max", type=float, default=92.0)
    p.add_argument("--source-fps", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse tracks, build co-occurrence, emit the clip manifest")
    _common(p)
    p.add_argument("--tracks", type=Path, required=True, help="annotation CSV")
    p.add_argument("--out", type=Path, required=True, help="manifest JSON path")
    p.add_argument("--frames", type=Path, default=None, help="frame directory (recorded for provenance)")
    p.add_argument("--clip-seconds", type=int, default=10)
    p.add_argument("--fps", type=int, default=1)
    p.add_argument("--stagger-seconds", type=str, default="10/3")
    p.add_argument("--min-box", type=float, default=70.0)
    p.add_argument("--resize-to", type=int, default=224)
    p.add_argument("--source-fps", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train encoder + recurrent head with mined triplets")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="run directory for stats + checkpoints")
    p.add_argument("--frames", type=Path, default=None, help="frame directory (toy encoder)")
    p.add_argument("--precomputed", type=Path, default=None, help="imported frame-token file")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-triplets", type=int, default=10)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--lr-start", type=float, default=1e-4)
    p.add_argument("--lr-peak", type=float, default=5e-4)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--warmup-fraction", type=float, default=0.05)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--j", type=int, default=20)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--grad-clip", type=float, default=0.0)
    p.add_argument("--checkpoint-epochs", type=str, default="5,10")
    p.add_argument("--d-model", type=int, default=768)
    p.add_argument("--n-latents", type=int, default=32)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--d-ff", type=int, default=0)
    p.add_argument("--out-dim", type=int, default=768)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--triplet-log", type=Path, default=None, help="optional mined-triplet audit CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write clip embeddings (or encoder tokens) to a binary file")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=Path, default=None)
    p.add_argument("--precomputed", type=Path, default=None)
    p.add_argument("--stage", choices=("video", "tokens"), default="video")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="build eval sets and score an embedder")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    p.add_argument("--sets", type=int, default=100)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--frames", type=Path, default=None)
    p.add_argument("--precomputed", type=Path, default=None)
    p.add_argument("--embeddings", type=Path, default=None, help="video-level embedding file")
    p.add_argument("--embedder", choices=("checkpoint", "embeddings", "random"), default=None)
    p.add_argument("--random-dim", type=int, default=64)
    p.add_argument("--sets-file", type=Path, default=None, help="reuse previously saved eval sets")
    p.add_argument("--save-sets", type=Path, default=None)
    p.add_argument("--filter-overlap", action="store_true")
    p.add_argument("--overlap-threshold", type=float, default=0.5)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--ranks-out", type=Path, default=None, help="rank table CSV (default: <out>.ranks.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="metrics table and SVG plots from run artifacts")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--stats", type=Path, required=True, help="training stats CSV")
    p.add_argument("--eval", action="append", default=[], metavar="LABEL=REPORT.json")
    p.add_argument("--train-run", type=Path, default=None, help="train run manifest (epoch times)")
    p.set_defaults(func=cmd_report)

    for name, sp in sub.choices.items():
        _SUBCOMMAND_FLAGS[name] = set(sp._option_string_actions)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import synth_tracks, write_dataset

    started = time.perf_counter()
    if args.box_min >= args.box_max:
        raise CLIError("--box-min must be below --box-max")
    tracks, source = synth_tracks(
        args.n_identities,
        args.duration_s,
        args.seed,
        n_videos=args.n_videos,
        image_size=args.image_size,
        box_range=(args.box_min, args.box_max),
        source_fps=args.source_fps,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    frames_dir, csv_path = write_dataset(tracks, source, args.out)
    write_run_manifest(
        args.out / "synth.run.json",
        "synth",
        args.seed,
        {
            "n_identities": args.n_identities,
            "duration_s": args.duration_s,
            "n_videos": args.n_videos,
            "image_size": args.image_size,
            "box_min": args.box_min,
            "box_max": args.box_max,
            "source_fps": args.source_fps,
        },
        inputs={},
        outputs={"tracks": csv_path, "frames": frames_dir},
        wall_time_s=time.perf_counter() - started,
    )
    print(f"synth: {len(tracks)} tracks over {args.n_videos} video(s) -> {args.out}")
    return 0


def _ingest_config(args):
    from .clips import IngestConfig

    return IngestConfig(
        clip_seconds=args.clip_seconds,
        fps=args.fps,
        stagger_seconds=args.stagger_seconds,
        min_box=args.min_box,
        resize_to=args.resize_to,
        source_fps=args.source_fps,
    )


def cmd_ingest(args) -> int:
    from .clips import build_manifest
    from .tracks import parse_tracks

    started = time.perf_counter()
    if args.frames is not None and not args.frames.is_dir():
        raise CLIError(f"frame directory not found: {args.frames}")
    tracks = parse_tracks(args.tracks)
    manifest = build_manifest(tracks, _ingest_config(args))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(args.out)
    write_run_manifest(
        args.out.parent / (args.out.name + ".run.json"),
        "ingest",
        args.seed,
        manifest.config.to_json_dict(),
        inputs={"tracks": args.tracks},
        outputs={"manifest": args.out},
        wall_time_s=time.perf_counter() - started,
    )
    for key, value in sorted(manifest.stats.items()):
        print(f"ingest: {key} = {value}")
    if manifest.stats["n_clips"] == 0:
        print("ingest: warning: no clips passed the window/size filters", file=sys.stderr)
    return 0


def _load_manifest(path: Path):
    from .clips import ClipManifest

    verify_artifact(path)
    return ClipManifest.load(path)


def _build_encoder_and_source(args, manifest, seed: int):
    """Resolve (encoder, frame_source, forced_freeze) from CLI inputs."""
    from .clips import ImageDirectorySource
    from .encoders import PrecomputedEncoder, ToyPatchEncoder, import_embeddings

    if args.precomputed is not None:
        verify_artifact(args.precomputed)
        store = import_embeddings(args.precomputed)
        return PrecomputedEncoder(store), None, True
    if args.frames is None:
        raise CLIError("need --frames (toy encoder) or --precomputed (imported tokens)")
    if manifest.config.resize_to % args.patch_size:
        raise CLIError(
            f"resize_to {manifest.config.resize_to} not divisible by patch size {args.patch_size}"
        )
    encoder = ToyPatchEncoder(
        patch_size=args.patch_size, d_model=args.d_model, seed=seed
    )
    return encoder, ImageDirectorySource(args.frames), False


def cmd_train(args) -> int:
    from .model import RoVFConfig, init_model
    from .training import TrainConfig, train

    started = time.perf_counter()
    manifest = _load_manifest(args.manifest)
    encoder, source, forced_freeze = _build_encoder_and_source(args, manifest, args.seed)
    model_cfg = RoVFConfig(
        d_model=args.d_model if not forced_freeze else encoder.d_model,
        n_latents=args.n_latents,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        dropout=args.dropout,
        d_ff=args.d_ff,
        out_dim=args.out_dim,
    )
    model = init_model(model_cfg, args.seed)
    checkpoint_epochs = tuple(
        int(e) for e in str(args.checkpoint_epochs).split(",") if e.strip()
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_triplets=args.batch_triplets,
        margin=args.margin,
        lr_start=args.lr_start,
        lr_peak=args.lr_peak,
        lr_end=args.lr_end,
        warmup_fraction=args.warmup_fraction,
        seed=args.seed,
        freeze_encoder=args.freeze_encoder or forced_freeze,
        optimizer=args.optimizer,
        j=args.j,
        k=args.k,
        grad_clip=args.grad_clip,
        checkpoint_epochs=checkpoint_epochs,
    )
    triplet_log: list | None = [] if args.triplet_log is not None else None
    result = train(
        manifest,
        manifest.cooccurrence,
        model,
        encoder,
        cfg,
        frame_source=source,
        out_dir=args.out,
        triplet_log=triplet_log,
    )
    if args.triplet_log is not None:
        lines = ["epoch,batch,anchor_clip,positive_clip,negative_clip,d_ap,d_an"]
        lines += [
            f"{e},{b},{a},{p},{n},{dap!r},{dan!r}" for e, b, a, p, n, dap, dan in triplet_log
        ]
        args.triplet_log.write_text("\n".join(lines) + "\n")

    outputs = {"stats": args.out / "stats.csv"}
    outputs.update({name: path for name, path in result.checkpoints.items()})
    write_run_manifest(
        args.out / "train.run.json",
        "train",
        args.seed,
        {**cfg.to_json_dict(), "rovf": model_cfg.to_json_dict(), "encoder": encoder.config_dict()},
        inputs={"manifest": args.manifest},
        outputs=outputs,
        wall_time_s=time.perf_counter() - started,
        extra={"epoch_times_s": result.stats.epoch_time_s,
               "epoch_mean_loss": result.stats.epoch_mean_loss},
    )
    final_loss = result.stats.epoch_mean_loss[-1]
    print(f"train: {cfg.epochs} epochs, final epoch mean loss {final_loss:.4f} -> {args.out}")
    return 0


def _embedder_from_checkpoint(args, manifest, checkpoint_path: Path):
    from .checkpoint import load_checkpoint
    from .clips import ImageDirectorySource
    from .embedder import ClipEmbedder
    from .encoders import import_embeddings

    verify_artifact(checkpoint_path)
    store = None
    if args.precomputed is not None:
        verify_artifact(args.precomputed)
        store = import_embeddings(args.precomputed)
    model, encoder, header = load_checkpoint(checkpoint_path, embedding_store=store)
    if encoder is None:
        raise CLIError(
            "checkpoint was trained on imported tokens; supply the token file via --precomputed"
        )
    source = None
    if encoder.needs_pixels:
        if args.frames is None:
            raise CLIError("this checkpoint's encoder needs --frames")
        source = ImageDirectorySource(args.frames)
    return ClipEmbedder(manifest, encoder, model, frame_source=source), header


def cmd_embed(args) -> int:
    import numpy as np

    from .encoders import EmbeddingStore, write_embeddings

    started = time.perf_counter()
    manifest = _load_manifest(args.manifest)
    embedder, _ = _embedder_from_checkpoint(args, manifest, args.checkpoint)
    clips: dict[int, "np.ndarray"] = {}
    if args.stage == "video":
        d_model = embedder.model.cfg.out_dim
        for clip in manifest.clips:
            emb = embedder.embed(clip.clip_id)
            clips[clip.clip_id] = np.asarray(emb, dtype=np.float32)[None, None, :]
    else:
        d_model = embedder.encoder.d_model
        for clip in manifest.clips:
            clips[clip.clip_id] = np.asarray(embedder.tokens(clip.clip_id), dtype=np.float32)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(args.out, EmbeddingStore(d_model=d_model, clips=clips))
    write_run_manifest(
        args.out.parent / (args.out.name + ".run.json"),
        "embed",
        args.seed,
        {"stage": args.stage, "checkpoint": str(args.checkpoint)},
        inputs={"manifest": args.manifest, "checkpoint": args.checkpoint},
        outputs={"embeddings": args.out},
        wall_time_s=time.perf_counter() - started,
    )
    print(f"embed: wrote {len(clips)} clips ({args.stage} stage) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .encoders import import_embeddings
    from .evaluation import evaluate, generate_eval_sets, load_eval_sets, save_eval_sets
    from .streams import derive

    started = time.perf_counter()
    manifest = _load_manifest(args.manifest)

    mode = args.embedder
    if mode is None:
        if args.embeddings is not None:
            mode = "embeddings"
        elif args.checkpoint is not None:
            mode = "checkpoint"
        else:
            raise CLIError("choose an embedder: --embeddings, --checkpoint, or --embedder random")

    epochs_meta = None
    if mode == "embeddings":
        if args.embeddings is None:
            raise CLIError("--embedder embeddings requires --embeddings FILE")
        verify_artifact(args.embeddings)
        store = import_embeddings(args.embeddings)

        def embed_clip(clip_id: int):
            tokens = store.tokens(clip_id)
            if tokens.shape[:2] != (1, 1):
                raise CLIError(
                    f"clip {clip_id}: expected video-level embeddings (1 frame, 1 token), "
                    f"got shape {tokens.shape}; re-run embed with --stage video"
                )
            return tokens[0, 0]

    elif mode == "checkpoint":
        if args.checkpoint is None:
            raise CLIError("--embedder checkpoint requires --checkpoint FILE")
        embedder, header = _embedder_from_checkpoint(args, manifest, args.checkpoint)
        epochs_meta = header.get("meta", {}).get("epoch")
        embed_clip = embedder.embed
    else:
        def embed_clip(clip_id: int):
            return derive(args.seed, "random-embedder", clip_id).standard_normal(args.random_dim)

    if args.sets_file is not None:
        sets, _ = load_eval_sets(args.sets_file)
    else:
        rng = derive(args.seed, "eval-sets")
        sets = generate_eval_sets(
            manifest,
            manifest.cooccurrence,
            args.sets,
            rng,
            filter_overlap=args.filter_overlap,
            overlap_threshold=args.overlap_threshold,
        )
    if args.save_sets is not None:
        save_eval_sets(
            args.save_sets,
            sets,
            args.seed,
            {"enabled": args.filter_overlap, "threshold": args.overlap_threshold},
        )

    report = evaluate(sets, embed_clip, shuffle_seed=args.shuffle_seed)
    report.metadata["embedder"] = mode
    if epochs_meta is not None:
        report.metadata["epochs"] = epochs_meta
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.save(args.out)
    ranks_out = args.ranks_out or args.out.parent / (args.out.name + ".ranks.csv")
    ranks_out.write_text(report.rank_table_csv())

    inputs = {"manifest": args.manifest}
    if mode == "embeddings":
        inputs["embeddings"] = args.embeddings
    elif mode == "checkpoint":
        inputs["checkpoint"] = args.checkpoint
    write_run_manifest(
        args.out.parent / (args.out.name + ".run.json"),
        "eval",
        args.seed,
        {"embedder": mode, "sets": len(sets), "shuffle_seed": args.shuffle_seed,
         "filter_overlap": args.filter_overlap, "overlap_threshold": args.overlap_threshold},
        inputs=inputs,
        outputs={"report": args.out, "ranks": ranks_out},
        wall_time_s=time.perf_counter() - started,
    )
    print(
        f"eval: {report.n_queries} queries  top1 {report.top1:.3f} "
        f"[{report.top1_ci[0]:.3f}, {report.top1_ci[1]:.3f}]  top3 {report.top3:.3f} "
        f"[{report.top3_ci[0]:.3f}, {report.top3_ci[1]:.3f}]"
    )
    return 0


def _read_stats_csv(path: Path):
    from .training import STATS_HEADER

    if not path.exists():
        raise CLIError(f"stats file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != STATS_HEADER:
        raise CLIError(f"{path}: not a training stats CSV (bad header)")
    if len(lines) < 2:
        raise CLIError(f"{path}: stats file has no data rows")
    rows = []
    for ln in lines[1:]:
        step, epoch, lr, loss, active, d_ap, d_an = ln.split(",")
        rows.append((int(step), int(epoch), float(lr), float(loss), float(active), float(d_ap), float(d_an)))
    return rows


def cmd_report(args) -> int:
    from .evaluation import EvalReport
    from .reporting import metrics_table_csv, svg_line_plot, write_text

    started = time.perf_counter()
    rows = _read_stats_csv(args.stats)
    steps = [float(r[0]) for r in rows]
    losses = [r[3] for r in rows]
    lrs = [r[2] for r in rows]

    epoch_time = None
    if args.train_run is not None:
        train_run = json.loads(args.train_run.read_text())
        times = train_run.get("epoch_times_s") or []
        if times:
            epoch_time = sum(times) / len(times)

    table_rows = []
    inputs: dict[str, Path] = {"stats": args.stats}
    for item in args.eval:
        if "=" not in item:
            raise CLIError(f"--eval expects LABEL=PATH, got {item!r}")
        label, path_txt = item.split("=", 1)
        report_path = Path(path_txt)
        verify_artifact(report_path)
        report = EvalReport.load(report_path)
        inputs[f"eval:{label}"] = report_path
        table_rows.append(
            {
                "model": label,
                "epochs": report.metadata.get("epochs", "-"),
                "top1": report.top1,
                "top3": report.top3,
                "epoch_time_s": epoch_time,
            }
        )

    args.out.mkdir(parents=True, exist_ok=True)
    table_path = write_text(args.out / "table.csv", metrics_table_csv(table_rows))
    loss_path = write_text(
        args.out / "loss.svg",
        svg_line_plot([("loss", steps, losses)], "Training loss", "step", "mean batch loss"),
    )
    lr_path = write_text(
        args.out / "lr.svg",
        svg_line_plot([("lr", steps, lrs)], "Learning-rate schedule", "step", "learning rate"),
    )
    write_run_manifest(
        args.out / "report.run.json",
        "report",
        args.seed,
        {"evals": args.eval},
        inputs=inputs,
        outputs={"table": table_path, "loss_svg": loss_path, "lr_svg": lr_path},
        wall_time_s=time.perf_counter() - started,
    )
    print(f"report: wrote table.csv, loss.svg, lr.svg -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_threads(argv)
        parser = build_parser()
        argv = _inject_config(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
