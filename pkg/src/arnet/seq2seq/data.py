"""Corpus and feature-file ingestion, and batching.

Parallel corpus: two aligned UTF-8 text files, one whitespace-tokenized
sequence per line.  For feature-based sources the source line holds the
path of a feature file (relative to the source file's directory).

Feature file layout (little-endian)::

    b"ARNFEAT1" | u32 g_dim | g_dim x f64 | u32 n | u32 s_dim | n*s_dim x f64
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..attention import EncodedSource
from .vocab import PAD, Vocabulary

FEATURE_MAGIC = b"ARNFEAT1"


class DataError(Exception):
    """Malformed or inconsistent input data."""


class FeatureFormatError(DataError):
    pass


class FeatureHeaderError(FeatureFormatError):
    pass


class FeatureDimensionError(FeatureFormatError):
    pass


class FeatureTruncatedError(FeatureFormatError):
    pass


def write_features(path, src: EncodedSource):
    g = np.ascontiguousarray(src.g, dtype="<f8")
    s = np.ascontiguousarray(src.s, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", g.shape[0]))
        fh.write(g.tobytes())
        fh.write(struct.pack("<II", s.shape[0], s.shape[1]))
        fh.write(s.tobytes())


def load_features(path) -> EncodedSource:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != FEATURE_MAGIC:
        raise FeatureHeaderError(f"{path}: bad magic {blob[:8]!r}")
    off = 8

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(blob):
            raise FeatureTruncatedError(f"{path}: truncated while reading {what}")
        chunk = blob[off:off + nbytes]
        off += nbytes
        return chunk

    (g_dim,) = struct.unpack("<I", take(4, "g_dim"))
    if g_dim == 0:
        raise FeatureDimensionError(f"{path}: g_dim is 0")
    g = np.frombuffer(take(8 * g_dim, "g"), dtype="<f8").astype(np.float64)
    n, s_dim = struct.unpack("<II", take(8, "s header"))
    if n == 0:
        raise FeatureDimensionError(f"{path}: declares zero local vectors")
    if s_dim == 0:
        raise FeatureDimensionError(f"{path}: s_dim is 0")
    s = np.frombuffer(take(8 * n * s_dim, "s"), dtype="<f8").astype(np.float64).reshape(n, s_dim)
    if off != len(blob):
        raise FeatureDimensionError(f"{path}: {len(blob) - off} trailing bytes after declared payload")
    return EncodedSource(g, s)


def read_lines(path, max_tokens: Optional[int] = None) -> List[List[str]]:
    with open(path, encoding="utf-8") as fh:
        rows = [line.split() for line in fh.read().splitlines()]
    if max_tokens is not None:
        rows = [r[:max_tokens] for r in rows]
    return rows


def load_parallel(src_path, tgt_path, max_src_len=300, max_tgt_len=300):
    """Aligned (source tokens, target tokens) pairs."""
    src = read_lines(src_path, max_src_len)
    tgt = read_lines(tgt_path, max_tgt_len)
    if len(src) != len(tgt):
        raise DataError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    if not src:
        raise DataError(f"{src_path} is empty")
    return list(zip(src, tgt))


@dataclass
class Example:
    """One training pair; ``src`` is token ids or an :class:`EncodedSource`."""

    src: object
    tgt: list  # caption ids, BOS ... EOS
    uid: int = 0


def make_examples(pairs, src_vocab: Optional[Vocabulary], tgt_vocab: Vocabulary, max_len: int,
                  feature_root: Optional[str] = None):
    out = []
    for k, (src, tgt) in enumerate(pairs):
        if feature_root is not None:
            source = load_features(os.path.join(feature_root, src[0]))
        else:
            if not src:
                raise DataError(f"line {k + 1}: empty source sequence")
            source = src_vocab.encode(src)
        out.append(Example(source, tgt_vocab.caption(tgt, max_len), k))
    return out


@dataclass
class Batch:
    tgt: np.ndarray  # (B, N) int
    tgt_mask: np.ndarray  # (B, N) float
    src: Optional[np.ndarray] = None  # (B, Ts) int, token sources
    src_mask: Optional[np.ndarray] = None  # (B, Ts) or (B, n)
    g: Optional[np.ndarray] = None  # (B, Dg), feature sources
    s: Optional[np.ndarray] = None  # (B, n, Ds)
    uids: Optional[list] = None

    @property
    def size(self):
        return self.tgt.shape[0]


def pad_ids(seqs, dtype=np.int64):
    L = max(len(x) for x in seqs)
    ids = np.full((len(seqs), L), PAD, dtype=dtype)
    mask = np.zeros((len(seqs), L))
    for b, seq in enumerate(seqs):
        ids[b, :len(seq)] = seq
        mask[b, :len(seq)] = 1.0
    return ids, mask


def make_batch(examples: List[Example]) -> Batch:
    if not examples:
        raise DataError("empty batch")
    tgt, tgt_mask = pad_ids([e.tgt for e in examples])
    uids = [e.uid for e in examples]
    first = examples[0].src
    if isinstance(first, EncodedSource):
        n = max(e.src.s.shape[0] for e in examples)
        Ds = first.s.shape[1]
        s = np.zeros((len(examples), n, Ds))
        s_mask = np.zeros((len(examples), n))
        for b, e in enumerate(examples):
            if e.src.s.shape[1] != Ds or e.src.g.shape != first.g.shape:
                raise DataError("feature dimensions differ within a batch")
            s[b, :e.src.s.shape[0]] = e.src.s
            s_mask[b, :e.src.s.shape[0]] = 1.0
        g = np.stack([e.src.g for e in examples])
        return Batch(tgt, tgt_mask, src_mask=s_mask, g=g, s=s, uids=uids)
    src, src_mask = pad_ids([e.src for e in examples])
    return Batch(tgt, tgt_mask, src=src, src_mask=src_mask, uids=uids)
