"""Versioned binary checkpoints.

Layout: magic string, format version, a JSON metadata block (model config,
step counter, rng state, vocabulary tokens), then named parameter arrays as
shape-prefixed 64-bit little-endian floats in registry order. The encoding is
fully deterministic: save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ValidationError

MAGIC = b"MODREASON-CKPT\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict[str, np.ndarray]
    step: int
    rng_state: dict | None
    vocab_tokens: list[str]
    extra: dict

    def meta(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_config": self.config.to_dict(),
            "step": self.step,
            "rng_state": self.rng_state,
            "vocab_tokens": self.vocab_tokens,
            "extra": self.extra,
            "param_names": list(self.arrays),
        }


def save(path, ckpt: Checkpoint):
    meta = json.dumps(ckpt.meta(), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION),
              struct.pack("<Q", len(meta)), meta]
    for name, arr in ckpt.arrays.items():
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    d = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ValidationError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<Q")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    for name in meta["param_names"]:
        (name_len,) = r.unpack("<I")
        stored = r.take(name_len).decode("utf-8")
        if stored != name:
            raise ValidationError(f"{path}: parameter order mismatch "
                                  f"({stored!r} != {name!r})")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape)
        arrays[name] = np.ascontiguousarray(data, dtype=np.float64)
    if r.off != len(r.buf):
        raise ValidationError(f"{path}: trailing bytes in checkpoint")
    return Checkpoint(
        config=ModelConfig.from_dict(meta["model_config"]),
        arrays=arrays,
        step=meta["step"],
        rng_state=meta.get("rng_state"),
        vocab_tokens=meta["vocab_tokens"],
        extra=meta.get("extra", {}),
    )
