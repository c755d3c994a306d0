"""Checkpoint container.

Layout: 8-byte magic ``RECFMR\\x00\\x01`` (last byte = format version), a
little-endian uint64 header length, a UTF-8 JSON header, then the raw
little-endian parameter bytes.  The header records the model config and,
per tensor, its name, dtype, shape and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import Seq2Seq

MAGIC = b"RECFMR\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Seq2Seq, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.cfg.to_dict(), "tensors": entries,
                         "extra": extra or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, name -> array) without building a model."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = blob[len(MAGIC)]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 1
    try:
        (hlen,) = struct.unpack("<Q", blob[start:start + 8])
        header = json.loads(blob[start + 8:start + 8 + hlen])
        payload = memoryview(blob)[start + 8 + hlen:]
        arrays = {}
        for e in header["tensors"]:
            if e["offset"] + e["nbytes"] > len(payload):
                raise ValueError(f"tensor {e['name']} runs past the end of the file")
            buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
            arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return header, arrays


def load_checkpoint(path: str | Path) -> Seq2Seq:
    header, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    dtype = next(iter(arrays.values())).dtype if arrays else None
    model = Seq2Seq(cfg, dtype=dtype)
    try:
        model.load_state_dict(arrays, strict=True)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: tensors do not match the stored config ({exc})") from None
    return model


def init_from_baseline(model: Seq2Seq, path: str | Path) -> list[str]:
    """Copy every same-named, same-shaped tensor from a checkpoint into ``model``.

    Sub-modules absent from the checkpoint (the recurrence encoder, the
    integration sub-layers) keep their fresh initialization.
    """
    _, arrays = read_checkpoint(path)
    return model.load_state_dict(arrays, strict=False)
