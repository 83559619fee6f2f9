"""Model bundle persistence.

Layout: magic ``PEMW``, u32 version=1, u64 FNV-1a hash of the config's
canonical JSON text, u32 length + that canonical JSON, little-endian f32
weights, then an optional length-prefixed JSON trailer with the training
log and backend metadata. All integers little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from pem.errors import DataFormatError
from pem.model.config import ModelConfig
from pem.model.train import ModelBundle

MAGIC = b"PEMW"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    config_text = bundle.config.canonical_text().encode("utf-8")
    trailer = json.dumps(
        {"train_log": list(bundle.train_log), "meta": bundle.meta},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, fnv1a64(config_text)))
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        fh.write(bundle.weights.astype("<f4").tobytes())
        fh.write(struct.pack("<I", len(trailer)))
        fh.write(trailer)


def load_model(path: str | Path) -> ModelBundle:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise DataFormatError("bad path", str(path))
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise DataFormatError("truncated model", str(path))
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise DataFormatError("bad magic", str(path))
    version, arch_hash = struct.unpack("<IQ", take(12))
    if version != VERSION:
        raise DataFormatError("version mismatch", f"{path}: version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config_text = take(cfg_len)
    try:
        config = ModelConfig.from_dict(json.loads(config_text.decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise DataFormatError("incompatible model", f"unparseable config: {exc}")
    if fnv1a64(config.canonical_text().encode("utf-8")) != arch_hash:
        raise DataFormatError("incompatible model", "arch hash mismatch")
    weights = np.frombuffer(take(4 * config.param_count()), dtype="<f4").copy()
    train_log: list[float] = []
    meta: dict = {}
    if off < len(data):
        (trailer_len,) = struct.unpack("<I", take(4))
        trailer = json.loads(take(trailer_len).decode("utf-8"))
        train_log = list(trailer.get("train_log", []))
        meta = dict(trailer.get("meta", {}))
    return ModelBundle(config, weights, train_log, meta)
