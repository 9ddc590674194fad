"""Binary persistence: little-endian container with magic "FINV".

Layout: magic (4 bytes) | u32 version | u32 header length | JSON header |
raw float64 payload. The header lists array names and shapes in payload
order, so every value round-trips bit-exactly. Checkpoints and null-embedding
schedules share the container; the header's "kind" field tells them apart.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .core import VelocityField
from .dataset import DatasetSpec
from .errors import CheckpointError, CheckpointVersionError
from .training import CHECKPOINT_VERSION, Checkpoint, TrainConfig

MAGIC = b"FINV"


def _write_container(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_container(path, expect_kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated container (only {len(data)} bytes)")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(found=version, supported=CHECKPOINT_VERSION)
    if len(data) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("kind") != expect_kind:
        raise CheckpointError(
            f"{path}: container holds {header.get('kind')!r}, expected {expect_kind!r}"
        )
    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload at array {entry['name']!r}")
        flat = np.frombuffer(data[offset : offset + nbytes], dtype="<f8")
        arrays[entry["name"]] = flat.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return header["meta"], arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    field = ckpt.field
    arrays: list[tuple[str, np.ndarray]] = []
    for i, (w, b) in enumerate(zip(field.weights, field.biases)):
        arrays.append((f"w{i}", w))
        arrays.append((f"b{i}", b))
    arrays.append(("emb", field.embeddings))
    meta = {
        "d": field.d,
        "d_c": field.d_c,
        "widths": list(field.widths),
        "activation": field.activation,
        "dataset": ckpt.spec.to_dict(),
        "train_config": ckpt.config.to_dict(),
    }
    _write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = _read_container(path, "checkpoint")
    widths = tuple(meta["widths"])
    n_layers = len(widths) + 1
    try:
        weights = tuple(arrays[f"w{i}"] for i in range(n_layers))
        biases = tuple(arrays[f"b{i}"] for i in range(n_layers))
        table = arrays["emb"]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc
    field = VelocityField(
        weights=weights, biases=biases, embeddings=table,
        d=meta["d"], d_c=meta["d_c"], widths=widths, activation=meta["activation"],
    )
    return Checkpoint(
        field=field,
        spec=DatasetSpec.from_dict(meta["dataset"]),
        config=TrainConfig.from_dict(meta["train_config"]),
    )


def save_null_schedule(schedule, guidance: float, path) -> None:
    meta = {"guidance": guidance, "steps": int(schedule.embeddings.shape[0]),
            "d_c": int(schedule.embeddings.shape[1])}
    _write_container(
        path, "null_schedule", meta,
        [("embeddings", schedule.embeddings),
         ("initial_losses", schedule.initial_losses),
         ("final_losses", schedule.final_losses)],
    )


def load_null_schedule(path):
    from .nti import NullSchedule

    meta, arrays = _read_container(path, "null_schedule")
    schedule = NullSchedule(
        embeddings=arrays["embeddings"],
        initial_losses=arrays["initial_losses"],
        final_losses=arrays["final_losses"],
    )
    return schedule, float(meta["guidance"])
