import numpy as np
import pytest

from arnet.datagen import (bundled_mnist_csv, copy_corpus, export_mnist_subset, read_mnist_csv, split_pairs,
                           stratified_split, summarize, synthetic_caption_corpus, write_parallel)
from arnet.pmnist import load_mnist_idx


def test_copy_corpus_pairs_are_identical_and_bounded():
    pairs = copy_corpus(200, 5, 7, seed=3, min_len=2)
    assert len(pairs) == 200
    for src, tgt in pairs:
        assert src == tgt and 2 <= len(src) <= 7
        assert set(src) <= {f"t{k}" for k in range(5)}
    assert copy_corpus(200, 5, 7, seed=3, min_len=2) == pairs
    assert copy_corpus(200, 5, 7, seed=4, min_len=2) != pairs


def test_generator_arguments_checked():
    with pytest.raises(ValueError):
        copy_corpus(0, 5, 5, 0)
    with pytest.raises(ValueError):
        copy_corpus(3, 5, 2, 0, min_len=3)
    with pytest.raises(ValueError):
        synthetic_caption_corpus(0, 0)
    with pytest.raises(ValueError):
        summarize([])


def test_summary_template():
    assert summarize(["x", "y", "y", "z"]) == ["opens", "with", "x", "closes", "with", "z", "mostly", "y"]
    assert summarize(["b", "a", "b"]) == ["opens", "and", "closes", "with", "b", "mostly", "b"]
    # frequency tie goes to the lexicographically smallest token
    assert summarize(["q", "p"])[-1] == "p"


def test_synthetic_captions_follow_their_sources():
    for src, tgt in synthetic_caption_corpus(50, seed=1):
        assert 5 <= len(src) <= 16
        assert tgt == summarize(src)


def test_split_and_write(tmp_path):
    pairs = copy_corpus(10, 4, 3, seed=0)
    tr, va, te = split_pairs(pairs, (0.8, 0.1, 0.1))
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert tr + va + te == pairs
    src, tgt = write_parallel(tr, tmp_path, "train")
    assert open(src).read().splitlines() == [" ".join(s) for s, _ in tr]
    assert open(tgt).read().splitlines() == [" ".join(t) for _, t in tr]


def test_stratified_split_is_balanced_and_disjoint():
    labels = np.repeat(np.arange(10), 30)
    tr, te = stratified_split(labels, 100, 50, seed=0)
    assert not set(tr) & set(te)
    assert np.all(np.bincount(labels[tr]) == 10) and np.all(np.bincount(labels[te]) == 5)
    with pytest.raises(ValueError):
        stratified_split(labels, 95, 50, 0)
    with pytest.raises(ValueError):
        stratified_split(labels, 300, 50, 0)


def test_csv_reader_takes_label_from_last_column(tmp_path):
    rows = np.zeros((2, 785), dtype=int)
    rows[0, :784] = 255
    rows[0, 784], rows[1, 784] = 7, 3
    path = tmp_path / "d.csv"
    np.savetxt(path, rows, fmt="%d", delimiter=",")
    X, y = read_mnist_csv(path)
    assert y.tolist() == [7, 3]
    assert X.shape == (2, 784) and X[0].min() == 255 and X[1].max() == 0


def test_bundled_subset_export(tmp_path):
    X, y = read_mnist_csv(bundled_mnist_csv())
    assert X.shape == (5000, 784) and sorted(set(y.tolist())) == list(range(10))
    paths = export_mnist_subset(tmp_path, 100, 50, seed=0)
    train = load_mnist_idx(paths["train-images-idx3-ubyte"], paths["train-labels-idx1-ubyte"])
    test = load_mnist_idx(paths["t10k-images-idx3-ubyte"], paths["t10k-labels-idx1-ubyte"])
    assert len(train) == 100 and len(test) == 50
    assert np.all(np.bincount(train.y) == 10)
