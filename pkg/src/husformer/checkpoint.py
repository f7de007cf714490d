"""Flat binary checkpoints.

Layout: ``b"HSCK"``, u32 version, u32 header length, a UTF-8 JSON header
(model config, training metadata, parameter names and shapes), then every
parameter as raw little-endian float64 in header order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import Husformer, ModelConfig

MAGIC = b"HSCK"
VERSION = 1


def checkpoint_bytes(model, meta=None):
    header = {
        "model": model.cfg.to_dict(),
        "meta": meta or {},
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    parts.extend(t.data.astype("<f8").tobytes() for t in model.params.values())
    return b"".join(parts)


def save_checkpoint(model, path, meta=None):
    Path(path).write_bytes(checkpoint_bytes(model, meta))


def checkpoint_from_bytes(buf):
    """Returns ``(model, meta)``."""
    if buf[:4] != MAGIC:
        raise FormatError("bad magic, not a checkpoint", 0)
    if len(buf) < 12:
        raise FormatError("truncated checkpoint header", len(buf))
    version, head_len = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    if len(buf) < 12 + head_len:
        raise FormatError("truncated checkpoint header", len(buf))
    try:
        header = json.loads(buf[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 12) from None
    cfg = ModelConfig.from_dict(header["model"])
    pos = 12 + head_len
    arrays = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        if pos + 8 * count > len(buf):
            raise FormatError(f"truncated data for parameter {name}", pos)
        arrays[name] = np.frombuffer(buf, "<f8", count, pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after parameters", pos)
    model = Husformer(cfg)
    model.load_state(arrays)
    return model, header["meta"]


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
