"""Free-running inference: batched greedy decoding and per-source beam search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..lstm import RegularizerConfig
from .data import Batch
from .model import CaptionModel
from .vocab import BOS, EOS


@dataclass
class GreedyResult:
    captions: List[list]  # BOS ... [EOS]
    last_hidden: np.ndarray  # (B, H) state that emitted EOS or hit max_len
    stop_reason: List[str]  # "EOS" | "max_len"
    log_probs: np.ndarray  # (B,) summed log-probability of the emitted tokens


def greedy_decode(model: CaptionModel, batch: Batch, max_len: int,
                  reg: Optional[RegularizerConfig] = None) -> GreedyResult:
    """Feed back the argmax token until EOS or ``max_len`` caption tokens."""
    if max_len < 2:
        raise ValueError("max_len must allow at least BOS and one token")
    B = batch.size
    ds = model.start(batch, reg)
    tokens = np.full(B, BOS)
    captions = [[BOS] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    last_h = np.zeros((B, model.cfg.hidden_dim))
    stop = ["max_len"] * B
    total = np.zeros(B)
    for step in range(max_len - 1):
        ds, logp = model.advance(ds, tokens, reg)
        pred = logp.argmax(axis=1)
        for b in np.flatnonzero(~done):
            captions[b].append(int(pred[b]))
            total[b] += logp[b, pred[b]]
            if pred[b] == EOS:
                stop[b] = "EOS"
                last_h[b] = ds.state.h[b]
        done |= pred == EOS
        if done.all():
            break
        tokens = pred
    open_rows = np.array([r == "max_len" for r in stop])
    last_h[open_rows] = ds.state.h[open_rows]
    return GreedyResult(captions, last_h, stop, total)


def normalized_score(log_prob: float, caption) -> float:
    """Summed log-probability divided by the number of generated tokens."""
    return log_prob / max(1, len(caption) - 1)


@dataclass
class BeamResult:
    caption: list
    log_prob: float
    score: float


def beam_search(model: CaptionModel, batch: Batch, beam_size: int, max_len: int,
                reg: Optional[RegularizerConfig] = None) -> BeamResult:
    """Beam search for the single source in ``batch``.

    Each step keeps the ``beam_size`` best expansions (by summed log-prob)
    over all live hypotheses; expansions ending in EOS are retired to the
    completed pool and the beam shrinks accordingly.  Hypotheses still live
    at ``max_len`` join the pool, and the winner is the pooled hypothesis with
    the best length-normalized score.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if batch.size != 1:
        raise ValueError("beam_search decodes one source at a time")
    ds = model.start(batch, reg)
    seqs = [[BOS]]
    scores = np.zeros(1)
    completed = []
    for step in range(max_len - 1):
        ds, logp = model.advance(ds, np.array([s[-1] for s in seqs]), reg)
        cand = (scores[:, None] + logp).ravel()
        V = logp.shape[1]
        order = np.argsort(-cand, kind="stable")[:beam_size]
        keep_rows, new_seqs, new_scores = [], [], []
        for flat in order:
            row, tok = divmod(int(flat), V)
            seq = seqs[row] + [tok]
            if tok == EOS:
                completed.append((seq, float(cand[flat])))
            else:
                keep_rows.append(row)
                new_seqs.append(seq)
                new_scores.append(cand[flat])
        if not keep_rows:
            seqs = []
            break
        ds = ds.select(np.array(keep_rows))
        seqs, scores = new_seqs, np.array(new_scores)
    completed.extend((s, float(sc)) for s, sc in zip(seqs, scores))
    best = max(completed, key=lambda item: normalized_score(item[1], item[0]))
    return BeamResult(best[0], best[1], normalized_score(best[1], best[0]))


def decode_corpus(model: CaptionModel, examples, max_len: int, beam_size: int = 1,
                  batch_size: int = 64, reg=None) -> List[list]:
    """Captions for every example; ``beam_size`` 1 uses batched greedy decoding."""
    from .data import make_batch
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        if beam_size == 1:
            out.extend(greedy_decode(model, make_batch(chunk), max_len, reg).captions)
        else:
            out.extend(beam_search(model, make_batch([e]), beam_size, max_len, reg).caption for e in chunk)
    return out
