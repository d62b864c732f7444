from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Token <-> id bijection with reserved ids PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, words: Sequence[str] = ()):
        self.itos = list(RESERVED)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            if w in self.stoi:
                raise ValueError(f"duplicate or reserved token {w!r}")
            self.stoi[w] = len(self.itos)
            self.itos.append(w)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 5) -> "Vocabulary":
        counts = Counter(tok for sent in sentences for tok in sent)
        # frequency-descending, ties broken lexicographically so builds are reproducible
        words = sorted((w for w, c in counts.items() if c >= min_count and w not in RESERVED),
                       key=lambda w: (-counts[w], w))
        return cls(words)

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int], strip=True) -> list:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS):
                continue
            if strip and i == EOS:
                break
            out.append(self.itos[i])
        return out

    def caption(self, tokens: Sequence[str], max_len: int) -> list:
        """``[BOS] + words + [EOS]`` truncated so the whole caption fits ``max_len``."""
        if max_len < 2:
            raise ValueError("max_len must leave room for BOS and EOS")
        return [BOS] + self.encode(tokens[:max_len - 2]) + [EOS]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.itos[len(RESERVED):]:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos
