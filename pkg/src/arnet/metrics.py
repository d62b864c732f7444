"""Corpus BLEU-1..4 and ROUGE-L over token lists."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence


@dataclass
class ScoredCorpus:
    hypotheses: List[list]
    references: List[List[list]]

    def __post_init__(self):
        if len(self.hypotheses) != len(self.references):
            raise ValueError("one reference set per hypothesis required")
        for k, refs in enumerate(self.references):
            if not refs:
                raise ValueError(f"hypothesis {k} has no reference")

    def __len__(self):
        return len(self.hypotheses)

    @classmethod
    def single(cls, hyps, refs):
        """Corpus with exactly one reference per hypothesis."""
        return cls([list(h) for h in hyps], [[list(r)] for r in refs])


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len, refs):
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def bleu_stats(corpus: ScoredCorpus, max_n: int = 4):
    """Clipped match / candidate counts per order plus (c, r) lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, refs in zip(corpus.hypotheses, corpus.references):
        c += len(hyp)
        r += _closest_ref_len(len(hyp), refs)
        for n in range(1, max_n + 1):
            h = ngrams(hyp, n)
            if not h:
                continue
            best = Counter()
            for ref in refs:
                for g, k in ngrams(ref, n).items():
                    if k > best[g]:
                        best[g] = k
            matches[n - 1] += sum(min(k, best[g]) for g, k in h.items())
            totals[n - 1] += sum(h.values())
    return matches, totals, c, r


def bleu(corpus: ScoredCorpus, max_n: int = 4) -> float:
    """Unsmoothed corpus BLEU with the closest-reference brevity penalty."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be between 1 and 4")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    matches, totals, c, r = bleu_stats(corpus, max_n)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def sentence_bleu(hyp, refs, max_n: int = 4) -> float:
    """Add-one smoothed (orders > 1) sentence BLEU; for debugging only."""
    matches, totals, c, r = bleu_stats(ScoredCorpus([list(hyp)], [[list(x) for x in refs]]), max_n)
    if c == 0 or matches[0] == 0:
        return 0.0
    logs = [math.log(matches[0] / totals[0])]
    logs += [math.log((m + 1) / (t + 1)) for m, t in zip(matches[1:], totals[1:])]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(logs) / max_n)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp, refs, beta_sq: float = 1.2) -> float:
    """LCS F-measure; precision and recall each maximized over references."""
    if not hyp:
        return 0.0
    precs, recs = [], []
    for ref in refs:
        lcs = lcs_length(hyp, ref)
        precs.append(lcs / len(hyp))
        recs.append(lcs / len(ref) if ref else 0.0)
    p, r = max(precs), max(recs)
    if p == 0.0 or r == 0.0:
        return 0.0
    return (1.0 + beta_sq) * p * r / (r + beta_sq * p)


def rouge_l(corpus: ScoredCorpus, beta_sq: float = 1.2) -> float:
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    scores = [rouge_l_sentence(h, refs, beta_sq) for h, refs in zip(corpus.hypotheses, corpus.references)]
    return sum(scores) / len(scores)


def metrics_report(corpus: ScoredCorpus) -> dict:
    report = {f"bleu_{n}": bleu(corpus, n) for n in range(1, 5)}
    report["rouge_l"] = rouge_l(corpus)
    report["corpus_size"] = len(corpus)
    return report
