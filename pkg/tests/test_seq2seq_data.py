import struct

import numpy as np
import pytest

from arnet.attention import EncodedSource
from arnet.seq2seq.data import (FEATURE_MAGIC, DataError, Example, FeatureDimensionError, FeatureHeaderError,
                                FeatureTruncatedError, load_features, load_parallel, make_batch, make_examples,
                                write_features)
from arnet.seq2seq.vocab import BOS, EOS, PAD, UNK, Vocabulary
from arnet.tensor import RngStream


def test_vocab_reserved_ids_and_frequency_order():
    v = Vocabulary.build([["b", "a", "b"], ["c", "a", "b"], ["d"]], min_count=2)
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert v.itos[4:] == ["b", "a"]
    assert v.encode(["a", "zzz"]) == [5, UNK]


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(["x", "x"])
    with pytest.raises(ValueError):
        Vocabulary(["<eos>"])


def test_vocab_decode_and_caption():
    v = Vocabulary(["a", "b", "c"])
    cap = v.caption(["a", "b", "c", "a"], max_len=4)
    assert cap == [BOS, 4, 5, EOS]
    assert v.decode(cap + [6]) == ["a", "b"]
    with pytest.raises(ValueError):
        v.caption(["a"], 1)


def test_vocab_save_load_round_trip(tmp_path):
    v = Vocabulary(["x", "y", "z"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v


def test_feature_file_with_large_declared_shapes(tmp_path):
    r = RngStream(0)
    src = EncodedSource(r.uniform(-1, 1, 1536), r.uniform(-1, 1, (64, 1536)))
    write_features(tmp_path / "f.bin", src)
    back = load_features(tmp_path / "f.bin")
    assert back.s.shape == (64, 1536)
    assert back.g.tobytes() == src.g.tobytes() and back.s.tobytes() == src.s.tobytes()


def _header(g_dim, n, s_dim, g=None, s=None):
    g = np.zeros(g_dim) if g is None else g
    s = np.zeros((n, s_dim)) if s is None else s
    return (FEATURE_MAGIC + struct.pack("<I", g_dim) + g.astype("<f8").tobytes()
            + struct.pack("<II", n, s_dim) + s.astype("<f8").tobytes())


def test_feature_file_with_no_locals_rejected(tmp_path):
    (tmp_path / "f.bin").write_bytes(_header(3, 0, 2))
    with pytest.raises(FeatureDimensionError, match="zero local"):
        load_features(tmp_path / "f.bin")


def test_feature_file_errors(tmp_path):
    (tmp_path / "magic.bin").write_bytes(b"NOTFEAT1" + _header(2, 1, 2)[8:])
    with pytest.raises(FeatureHeaderError):
        load_features(tmp_path / "magic.bin")
    (tmp_path / "short.bin").write_bytes(_header(2, 3, 2)[:-8])
    with pytest.raises(FeatureTruncatedError):
        load_features(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(_header(2, 1, 2) + b"\0" * 8)
    with pytest.raises(FeatureDimensionError, match="trailing"):
        load_features(tmp_path / "long.bin")


def test_feature_batch_dimension_mismatch():
    r = RngStream(1)
    ex = [Example(EncodedSource(r.uniform(-1, 1, 2), r.uniform(-1, 1, (2, 3))), [BOS, EOS], 0),
          Example(EncodedSource(r.uniform(-1, 1, 2), r.uniform(-1, 1, (2, 4))), [BOS, EOS], 1)]
    with pytest.raises(DataError):
        make_batch(ex)


def test_load_parallel_mismatch(tmp_path):
    (tmp_path / "a.src").write_text("x y\nz\n")
    (tmp_path / "a.tgt").write_text("p\n")
    with pytest.raises(DataError):
        load_parallel(tmp_path / "a.src", tmp_path / "a.tgt")


def test_make_batch_pads_and_masks():
    sv, tv = Vocabulary(["a", "b"]), Vocabulary(["p", "q"])
    ex = make_examples([(["a", "b", "a"], ["p"]), (["b"], ["p", "q"])], sv, tv, max_len=8)
    batch = make_batch(ex)
    assert batch.src.tolist() == [[4, 5, 4], [5, PAD, PAD]]
    assert batch.src_mask.tolist() == [[1, 1, 1], [1, 0, 0]]
    assert batch.tgt.tolist() == [[BOS, 4, EOS, PAD], [BOS, 4, 5, EOS]]
    assert batch.tgt_mask.sum() == 7


def test_empty_source_rejected():
    with pytest.raises(DataError):
        make_examples([([], ["p"])], Vocabulary(["a"]), Vocabulary(["p"]), 5)


def test_feature_examples_resolve_relative_paths(tmp_path):
    r = RngStream(2)
    write_features(tmp_path / "img1.bin", EncodedSource(r.uniform(-1, 1, 3), r.uniform(-1, 1, (2, 4))))
    ex = make_examples([(["img1.bin"], ["p"])], None, Vocabulary(["p"]), 5, feature_root=str(tmp_path))
    assert ex[0].src.s.shape == (2, 4)
