"""Synthetic corpora (copy task, rule-summarized pseudo-code) and an MNIST subset exporter."""

from __future__ import annotations

import gzip
import os
from collections import Counter
from typing import List, Tuple

import numpy as np

from .tensor import RngStream

KEYWORDS = ["def", "return", "if", "else", "for", "while", "in", "not", "and", "or", "print", "len",
            "range", "append", "import", "class", "self", "None", "True", "False"]
SYMBOLS = ["=", "+", "-", "*", "(", ")", ":", ",", "[", "]", "==", "<"]
IDENTIFIERS = [f"v{k}" for k in range(8)] + [f"n{k}" for k in range(4)]


def copy_corpus(size: int, vocab: int, max_len: int, seed: int, min_len: int = 1) -> List[Tuple[list, list]]:
    """Random token sequences paired with themselves."""
    if size < 1:
        raise ValueError("size must be at least 1")
    if vocab < 1 or not 1 <= min_len <= max_len:
        raise ValueError("need vocab >= 1 and 1 <= min_len <= max_len")
    rng = RngStream(seed).fork("copy")
    words = [f"t{k}" for k in range(vocab)]
    out = []
    for _ in range(size):
        n = int(rng.integers(min_len, max_len + 1))
        seq = [words[int(j)] for j in rng.integers(0, vocab, n)]
        out.append((seq, list(seq)))
    return out


def summarize(source: List[str]) -> List[str]:
    """Deterministic template over the first, last and most frequent source tokens.

    Frequency ties go to the lexicographically smallest token.
    """
    if not source:
        raise ValueError("cannot summarize an empty sequence")
    counts = Counter(source)
    top = min(counts, key=lambda w: (-counts[w], w))
    first, last = source[0], source[-1]
    if first == last:
        return ["opens", "and", "closes", "with", first, "mostly", top]
    return ["opens", "with", first, "closes", "with", last, "mostly", top]


def program_like(rng: RngStream, min_len: int, max_len: int) -> List[str]:
    """Random statement-shaped token soup: keyword, identifiers, operators."""
    n = int(rng.integers(min_len, max_len + 1))
    pools = (KEYWORDS, IDENTIFIERS, SYMBOLS)
    weights = np.array([0.35, 0.4, 0.25])
    out = []
    for _ in range(n):
        pool = pools[int(np.searchsorted(np.cumsum(weights), rng.random()))]
        out.append(pool[int(rng.integers(0, len(pool)))])
    return out


def synthetic_caption_corpus(size: int, seed: int, min_len: int = 5, max_len: int = 16):
    if size < 1:
        raise ValueError("size must be at least 1")
    rng = RngStream(seed).fork("synthetic-caption")
    out = []
    for _ in range(size):
        src = program_like(rng, min_len, max_len)
        out.append((src, summarize(src)))
    return out


def write_parallel(pairs, out_dir, prefix="train"):
    """Write ``<prefix>.src`` / ``<prefix>.tgt``; returns the two paths."""
    os.makedirs(out_dir, exist_ok=True)
    src_path = os.path.join(out_dir, f"{prefix}.src")
    tgt_path = os.path.join(out_dir, f"{prefix}.tgt")
    with open(src_path, "w", encoding="utf-8", newline="\n") as fs, \
            open(tgt_path, "w", encoding="utf-8", newline="\n") as ft:
        for src, tgt in pairs:
            fs.write(" ".join(src) + "\n")
            ft.write(" ".join(tgt) + "\n")
    return src_path, tgt_path


def split_pairs(pairs, fractions=(0.8, 0.1, 0.1)):
    """Contiguous train/val/test split of an already random corpus."""
    n = len(pairs)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return pairs[:a], pairs[a:b], pairs[b:]


# ---------------------------------------------------------------------------
# MNIST subset


def bundled_mnist_csv() -> str:
    """Path of the 5 000-digit MNIST sample shipped inside mlxtend (0.24)."""
    try:
        from importlib.resources import files
        path = files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz"
    except ModuleNotFoundError:
        raise FileNotFoundError("mlxtend is not installed; install the 'mnist' extra") from None
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found in the installed mlxtend")
    return str(path)


def read_mnist_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of ``p0 .. p783, label`` (pixels 0..255, mlxtend layout); gzip is detected by suffix."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        data = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    if data.ndim != 2 or data.shape[1] != 785:
        raise ValueError(f"{path}: expected 785 columns, got {data.shape}")
    return data[:, :-1].astype(np.uint8), data[:, -1]


def stratified_split(labels, n_train: int, n_test: int, seed: int):
    """Class-balanced disjoint index sets (sizes must divide by the class count)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    k = len(classes)
    if n_train % k or n_test % k:
        raise ValueError(f"train/test sizes must be multiples of {k}")
    rng = RngStream(seed).fork("mnist-split")
    tr, te = [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        a, b = n_train // k, n_test // k
        if a + b > len(idx):
            raise ValueError(f"class {c} has only {len(idx)} examples, need {a + b}")
        tr.extend(idx[:a])
        te.extend(idx[a:a + b])
    tr, te = np.array(tr), np.array(te)
    return tr[rng.permutation(len(tr))], te[rng.permutation(len(te))]


def export_mnist_subset(out_dir, n_train=3000, n_test=2000, seed=0, csv_path=None):
    """Write IDX train/test files for a stratified subset; returns the four paths."""
    from .pmnist import write_idx
    images, labels = read_mnist_csv(csv_path or bundled_mnist_csv())
    tr, te = stratified_split(labels, n_train, n_test, seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in
             ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
              "t10k-labels-idx1-ubyte")}
    write_idx(paths["train-images-idx3-ubyte"], paths["train-labels-idx1-ubyte"], images[tr], labels[tr])
    write_idx(paths["t10k-images-idx3-ubyte"], paths["t10k-labels-idx1-ubyte"], images[te], labels[te])
    return paths
