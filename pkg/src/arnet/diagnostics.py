"""Training/inference discrepancy of final decoder hidden states.

Traces are collected twice per input: once under teacher forcing (the state
that emits EOS) and once free-running (the state that emits EOS or hits the
length cap).  The two populations are compared with cosine distances.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import List

import numpy as np

from .seq2seq.data import make_batch
from .seq2seq.decoding import greedy_decode
from .seq2seq.model import CaptionModel
from .seq2seq.vocab import EOS

ZERO_NORM = 1e-12


class ZeroNormError(ValueError):
    """Cosine distance is undefined for (near) zero vectors."""


@dataclass
class RunTrace:
    uid: int
    mode: str  # training | inference
    hidden: np.ndarray
    stop_reason: str  # EOS | max_len


def cosine_distance(h1, h2) -> float:
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise ValueError(f"shape mismatch {h1.shape} vs {h2.shape}")
    sq1, sq2 = float(h1 @ h1), float(h2 @ h2)
    if np.sqrt(sq1) < ZERO_NORM or np.sqrt(sq2) < ZERO_NORM:
        raise ZeroNormError("cosine distance of a zero-norm vector")
    # sqrt(sq*sq) == sq exactly, so d(h, h) is exactly 0 and d(h, -h) exactly 2
    cos = float(h1 @ h2) / np.sqrt(sq1 * sq2)
    return 1.0 - min(1.0, max(-1.0, cos))


def _stack(traces):
    return np.stack([t.hidden for t in traces]) if traces else np.zeros((0, 0))


def mean_centroid_distance(U: List[RunTrace], V: List[RunTrace]) -> float:
    if not U or not V:
        raise ValueError("both trace sets must be non-empty")
    if len(U) != len(V):
        raise ValueError(f"trace sets differ in size ({len(U)} vs {len(V)})")
    return cosine_distance(_stack(U).mean(axis=0), _stack(V).mean(axis=0))


def pointwise_distance(U: List[RunTrace], V: List[RunTrace]) -> float:
    if not U or len(U) != len(V):
        raise ValueError("trace sets must be non-empty and of equal size")
    for u, v in zip(U, V):
        if u.uid != v.uid:
            raise ValueError(f"traces misaligned: input {u.uid} paired with {v.uid}")
    return float(np.mean([cosine_distance(u.hidden, v.hidden) for u, v in zip(U, V)]))


def collect_traces(model: CaptionModel, examples, mode: str, max_len: int, batch_size: int = 64,
                   reg=None) -> List[RunTrace]:
    if mode not in ("training", "inference"):
        raise ValueError(f"unknown mode {mode!r}")
    traces = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = make_batch(chunk)
        if mode == "training":
            if any(e.tgt is None or len(e.tgt) < 2 for e in chunk):
                raise ValueError("training-mode traces need gold captions")
            tf = model.teacher_forced(batch, reg=reg, training=False, need_grads=False)
            # the step predicting the final gold token (EOS) is the last unmasked one
            last = tf.hidden_mask.sum(axis=0).astype(int) - 1
            for b, e in enumerate(chunk):
                reason = "EOS" if e.tgt[-1] == EOS else "max_len"
                traces.append(RunTrace(e.uid, mode, tf.hiddens[last[b], b].copy(), reason))
        else:
            res = greedy_decode(model, batch, max_len, reg)
            for b, e in enumerate(chunk):
                traces.append(RunTrace(e.uid, mode, res.last_hidden[b].copy(), res.stop_reason[b]))
    return traces


def discrepancy_report(train_traces, infer_traces) -> dict:
    counts = {}
    for t in list(train_traces) + list(infer_traces):
        key = f"{t.mode}:{t.stop_reason}"
        counts[key] = counts.get(key, 0) + 1
    return {
        "d_mc": mean_centroid_distance(train_traces, infer_traces),
        "d_pw": pointwise_distance(train_traces, infer_traces),
        "n_pairs": len(train_traces),
        "stop_reasons": dict(sorted(counts.items())),
    }


def export_embeddings(traces: List[RunTrace], path) -> int:
    """Tab-separated rows ``uid, mode, h_0 .. h_{H-1}``; returns the row count."""
    if not traces:
        raise ValueError("nothing to export")
    H = traces[0].hidden.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["input_id", "mode"] + [f"h{j}" for j in range(H)])
        for t in traces:
            w.writerow([t.uid, t.mode] + [f"{x:.17g}" for x in t.hidden])
    return len(traces)


def read_embeddings(path) -> List[RunTrace]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return [RunTrace(int(r[0]), r[1], np.array([float(x) for x in r[2:]]), "") for r in rows[1:]]


def write_report(report: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
