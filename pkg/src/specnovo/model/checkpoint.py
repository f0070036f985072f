"""Binary checkpoint format.

Layout: ``b"SPNV"``, uint32 format version, uint64 header length, a UTF-8
JSON header, then raw little-endian tensors back to back. The header lists
every tensor with its group, dtype, shape and byte offset, and a CRC32 of
the tensor payload.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Optional

import numpy as np

from ..errors import CheckpointError
from .config import ModelConfig
from .train import TrainState
from .vocab import OutputVocab

MAGIC = b"SPNV"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
GROUPS = ("params", "m", "v")


def save_checkpoint(state: TrainState, path) -> None:
    entries, chunks, offset = [], [], 0
    for group in GROUPS:
        tensors = getattr(state, group)
        for name in state.params:
            a = np.ascontiguousarray(tensors[name])
            data = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
            entries.append({"group": group, "name": name, "dtype": a.dtype.str.lstrip("<>=|"),
                            "shape": list(a.shape), "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
    payload = b"".join(chunks)
    header = {
        "config": state.config.to_dict(),
        "vocab": state.vocab.itos,
        "input_vocab": list(state.input_vocab),
        "step": state.step,
        "epoch": state.epoch,
        "lr": state.lr,
        "rng_seed": state.rng_seed,
        "phase": state.phase,
        "weight_decay": state.weight_decay,
        "tensors": entries,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    os.replace(tmp, path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    prefix = fh.read(_PREFIX.size)
    if len(prefix) < _PREFIX.size:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    raw = fh.read(hlen)
    if len(raw) < hlen:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        return json.loads(raw.decode("utf-8")), _PREFIX.size + hlen
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None


def load_checkpoint(path, fingerprint_width: Optional[int] = None) -> TrainState:
    """Read a checkpoint; ``fingerprint_width`` asserts the runtime configuration."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from None
    with fh:
        header, _ = _read_header(fh)
        payload = fh.read()
    try:
        cfg = ModelConfig.from_dict(header["config"])
        total = header["payload_bytes"]
        entries = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint header missing fields: {exc}") from None
    if len(payload) != total:
        raise CheckpointError(f"checkpoint payload is {len(payload)} bytes, expected {total}")
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError("checkpoint payload checksum mismatch")
    if fingerprint_width is not None and cfg.fingerprint_width != fingerprint_width:
        raise CheckpointError(
            f"checkpoint fingerprint width {cfg.fingerprint_width} != configured {fingerprint_width}")
    groups = {g: {} for g in GROUPS}
    for e in entries:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        a = np.frombuffer(payload, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)),
                          offset=e["offset"]).reshape(e["shape"])
        groups[e["group"]][e["name"]] = a.astype(a.dtype.newbyteorder("="), copy=True)
    return TrainState(groups["params"], cfg, OutputVocab(header["vocab"]), groups["m"], groups["v"],
                      step=header["step"], epoch=header["epoch"], lr=header["lr"],
                      rng_seed=header["rng_seed"], phase=header["phase"],
                      weight_decay=header.get("weight_decay", 0.0),
                      input_vocab=tuple(header["input_vocab"]))
