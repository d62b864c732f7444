"""Bit-exact checkpoint files.

Layout (little-endian)::

    b"ARNETCKPT" | u32 version | u32 record_count |
    record* = u16 name_len | name (utf-8) | u8 rank | u32 dim * rank | f64 payload (row-major)

Non-tensor state (config snapshot, stage marker, RNG state, optimizer step,
permutation seed, history) is canonical JSON stored as the rank-1 record
``__meta__`` holding one byte value per f64.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ARNETCKPT"
VERSION = 1
META_KEY = "__meta__"


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)

    def params(self, prefix=""):
        """Model tensors (no optimizer / snapshot records)."""
        skip = ("adam.", "best.")
        return {k: v for k, v in self.tensors.items() if not k.startswith(skip) and k.startswith(prefix)}

    def with_prefix(self, prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode(ckpt: Checkpoint) -> bytes:
    records = [(META_KEY, np.frombuffer(_canonical_json(ckpt.meta), dtype=np.uint8).astype(np.float64))]
    for name in sorted(ckpt.tensors):
        if name == META_KEY:
            raise CheckpointError(f"reserved tensor name {META_KEY}")
        records.append((name, np.asarray(ckpt.tensors[name], dtype=np.float64)))
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def decode(blob: bytes) -> Checkpoint:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 8:
        raise CheckpointError("truncated checkpoint header")
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version > VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version} is newer than supported {VERSION}")
    if version < 1:
        raise CheckpointVersionError(f"unknown checkpoint format version {version}")
    meta, tensors = None, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if off + 8 * size > len(blob):
                raise CheckpointError(f"truncated payload for {name}")
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
            off += 8 * size
            if name == META_KEY:
                meta = json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))
            else:
                tensors[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return Checkpoint(meta or {}, tensors)


def save(ckpt: Checkpoint, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode(ckpt))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())


class DirectoryLock:
    """Exclusive ownership of a run directory via an O_EXCL lock file."""

    def __init__(self, directory):
        self.path = os.path.join(directory, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CheckpointError(f"{self.path} exists; another run owns this directory") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
