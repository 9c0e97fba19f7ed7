"""Versioned binary checkpoint format.

Layout (little-endian)::

    magic       4 bytes   b"NFMT"
    version     u16
    vocab hash  32 bytes  sha256 digest of the token vocabulary
    config      u32 length + UTF-8 JSON of ModelConfig
    n_arrays    u32
    per array:  u16 name length, name (UTF-8), u8 dtype code, u8 ndim,
                ndim x u32 dims, raw little-endian data (C order)
    crc32       u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from ..slottok import vocab_hash
from .model import ModelConfig, ModelParams, param_shapes

MAGIC = b"NFMT"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class VocabMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


def dumps(params: ModelParams, vocab_digest: bytes | None = None) -> bytes:
    digest = vocab_digest if vocab_digest is not None else bytes.fromhex(vocab_hash())
    if len(digest) != 32:
        raise ValueError("vocabulary digest must be 32 bytes")
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), digest,
             struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params.tensors))]
    for name, arr in params.tensors.items():
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _CODES:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw,
                  struct.pack("<BB", _CODES[dt], arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype=dt).tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> ModelParams:
    if len(data) < 4 + 2 + 32 + 4 or data[:4] != MAGIC:
        raise CorruptFile("not a checkpoint (bad magic or too short)")
    cur = _Cursor(data[:-4] if len(data) >= 4 else b"")
    cur.take(4)
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptFile("checksum mismatch (truncated or damaged file)")
    digest = cur.take(32)
    if digest.hex() != vocab_hash():
        raise VocabMismatch("checkpoint was written for a different vocabulary")
    (n_cfg,) = cur.unpack("<I")
    try:
        cfg = ModelConfig(**json.loads(cur.take(n_cfg).decode()))
    except (TypeError, ValueError) as exc:
        raise CorruptFile(f"bad model config: {exc}") from None
    (n_arrays,) = cur.unpack("<I")
    tensors = {}
    for _ in range(n_arrays):
        (n_name,) = cur.unpack("<H")
        name = cur.take(n_name).decode()
        code, ndim = cur.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptFile(f"unknown dtype code {code}")
        shape = cur.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(cur.take(count * dt.itemsize), dtype=dt).reshape(shape).copy()
    if cur.pos != len(cur.data):
        raise CorruptFile("trailing bytes after the last array")
    expected = param_shapes(cfg)
    if set(expected) != set(tensors) or any(tensors[k].shape != s for k, s in expected.items()):
        raise CorruptFile("arrays do not match the stored model config")
    return ModelParams(cfg, {k: tensors[k] for k in expected})


def save_checkpoint(params: ModelParams, path, vocab_digest: bytes | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params, vocab_digest))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        return loads(fh.read())
