"""Self-describing checkpoint container.

Layout: magic ``RVCK``, u16 version, u32 header length, canonical-JSON
header, then the parameter payload (named blocks of IEEE-754 float32
little-endian values, concatenated in header order). The header records the
head config, the encoder config, seed lineage, block names/shapes, and a
sha256 of the payload; loading verifies the checksum, and save(load(x)) is
byte-identical to x.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .encoders import PrecomputedEncoder, ToyPatchEncoder
from .model import RoVFConfig, RoVFModel

CHECKPOINT_MAGIC = b"RVCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _named_blocks(model: RoVFModel, encoder) -> dict[str, np.ndarray]:
    blocks = {f"rovf.{name}": arr for name, arr in model.params.items()}
    if encoder is not None:
        for name, arr in getattr(encoder, "params", {}).items():
            blocks[f"encoder.{name}"] = arr
    return blocks


def save_checkpoint(
    path: str | Path,
    model: RoVFModel,
    encoder=None,
    seeds: dict | None = None,
    meta: dict | None = None,
) -> None:
    blocks = _named_blocks(model, encoder)
    names = sorted(blocks)
    payload = b"".join(
        np.ascontiguousarray(blocks[name], dtype="<f4").tobytes() for name in names
    )
    header = {
        "format_version": CHECKPOINT_VERSION,
        "rovf_config": model.cfg.to_json_dict(),
        "encoder_config": encoder.config_dict() if encoder is not None else None,
        "seeds": seeds or {},
        "meta": meta or {},
        "blocks": [{"name": n, "shape": list(blocks[n].shape)} for n in names],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str | Path, embedding_store=None):
    """Returns (model, encoder, header).

    ``encoder`` is a ToyPatchEncoder with restored weights, a
    PrecomputedEncoder bound to ``embedding_store`` when the checkpoint was
    trained on imported embeddings (the store itself is not checkpointed),
    or None for that case when no store is supplied.
    """
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_end = 10 + header_len
    if header_end > len(data):
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(data[10:header_end].decode("utf-8"))
    payload = data[header_end:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"block {block['name']}: truncated payload")
        arrays[block["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after parameter payload")

    cfg = RoVFConfig.from_json_dict(header["rovf_config"])
    model_params = {
        name[len("rovf."):]: arr for name, arr in arrays.items() if name.startswith("rovf.")
    }
    model = RoVFModel(cfg=cfg, params=model_params)

    encoder = None
    enc_cfg = header.get("encoder_config")
    if enc_cfg is not None:
        if enc_cfg["kind"] == "toy_patch":
            encoder = ToyPatchEncoder.from_config(enc_cfg)
            for name in encoder.params:
                encoder.params[name] = arrays[f"encoder.{name}"]
        elif enc_cfg["kind"] == "precomputed" and embedding_store is not None:
            encoder = PrecomputedEncoder(embedding_store)
    return model, encoder, header
