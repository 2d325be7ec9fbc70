"""Binary checkpoint format for model parameters.

Layout (all integers little-endian):

    magic          4 bytes  b"SNMO"
    format version u32      currently 1
    layer count    u32      linear layers including the head
    per layer      u32 n_in, u32 n_out
    head kind      u8       0 = survival, 1 = classification
    payload        float32  per layer: W row-major, then b

Training arithmetic is float64; checkpoints store float32, so save -> load
-> save is byte-identical. A JSON sidecar (same stem, .json) carries the
encoder config, seed, fold id, and training metrics.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import CLASSIFICATION, SURVIVAL, EncoderConfig, ModelParams

MAGIC = b"SNMO"
FORMAT_VERSION = 1

_HEAD_CODE = {SURVIVAL: 0, CLASSIFICATION: 1}
_HEAD_KIND = {v: k for k, v in _HEAD_CODE.items()}


def checkpoint_bytes(params: ModelParams) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.weights))]
    for w in params.weights:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    parts.append(struct.pack("<B", _HEAD_CODE[params.head]))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def save(params: ModelParams, path: str | Path, sidecar: dict | None = None) -> Path:
    """Write the checkpoint atomically, plus its JSON sidecar."""
    path = Path(path)
    _atomic_write_bytes(path, checkpoint_bytes(params))
    meta = {
        "schema_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "head": params.head,
        "n_outputs": params.n_outputs,
    }
    if sidecar:
        meta.update(sidecar)
    _atomic_write_bytes(
        path.with_suffix(".json"),
        (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode(),
    )
    return path


def load(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint and its sidecar (empty dict when missing).

    Weights come back as float64 (exact widening of the stored float32).
    """
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    shapes = []
    for _ in range(n_layers):
        n_in, n_out = struct.unpack_from("<II", blob, offset)
        shapes.append((n_in, n_out))
        offset += 8
    head = _HEAD_KIND.get(blob[offset])
    if head is None:
        raise ValueError(f"{path}: unknown head kind byte {blob[offset]}")
    offset += 1
    weights, biases = [], []
    for n_in, n_out in shapes:
        w = np.frombuffer(blob, dtype="<f4", count=n_in * n_out, offset=offset)
        offset += 4 * n_in * n_out
        b = np.frombuffer(blob, dtype="<f4", count=n_out, offset=offset)
        offset += 4 * n_out
        weights.append(w.reshape(n_in, n_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")

    meta: dict = {}
    sidecar_path = path.with_suffix(".json")
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text())
    if "config" in meta:
        cfg = EncoderConfig.from_dict(meta["config"])
    else:
        cfg = EncoderConfig(
            input_dim=shapes[0][0],
            hidden_widths=tuple(n_out for _, n_out in shapes[:-1]),
        )
    params = ModelParams(
        config=cfg,
        head=head,
        n_outputs=shapes[-1][1],
        weights=weights,
        biases=biases,
    )
    return params, meta


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
