import numpy as np
import pytest
from conftest import exhaustive_decode
from hypothesis import given, settings, strategies as st

from arnet.lstm import LstmState
from arnet.seq2seq.data import Batch
from arnet.seq2seq.decoding import beam_search, decode_corpus, greedy_decode, normalized_score
from arnet.seq2seq.model import CaptionModel, ModelConfig
from arnet.seq2seq.vocab import BOS, EOS
from arnet.tensor import RngStream


class _Cfg:
    hidden_dim = 1
    tgt_vocab = 5


class _State:
    def __init__(self, prefixes):
        self.prefixes = prefixes
        self.state = LstmState(np.zeros((len(prefixes), 1)), np.zeros((len(prefixes), 1)))

    def select(self, rows):
        return _State([self.prefixes[r] for r in rows])


class TableModel:
    """Next-token distribution looked up from the generated prefix."""

    cfg = _Cfg()

    def __init__(self, table, default):
        self.table = table
        self.default = default

    def start(self, batch, reg=None):
        return _State([() for _ in range(batch.size)])

    def advance(self, ds, tokens, reg=None):
        prefixes = [p + (int(t),) for p, t in zip(ds.prefixes, tokens)]
        probs = np.array([self.table.get(p, self.default) for p in prefixes], dtype=float)
        with np.errstate(divide="ignore"):
            return _State(prefixes), np.log(probs)


def one_source(B=1):
    return Batch(np.full((B, 2), BOS), np.ones((B, 2)), np.full((B, 1), 4), np.ones((B, 1)))


#  token ids: 0 pad, 1 BOS, 2 EOS, 3, 4
UNIFORM = [0.0, 0.0, 0.2, 0.4, 0.4]


def greedy_trap():
    """Greedy picks 3 first (0.5) and then faces a flat tail; 4 leads to a sure EOS."""
    table = {
        (BOS,): [0, 0, 0.0, 0.5, 0.5 - 1e-3],
        (BOS, 3): [0, 0, 0.34, 0.33, 0.33],
        (BOS, 4): [0, 0, 1.0 - 1e-9, 0.5e-9, 0.5e-9],
    }
    return TableModel(table, [0.0, 0.0, 1 / 3, 1 / 3, 1 / 3])


def test_eos_first_gives_empty_caption():
    model = TableModel({}, [0.0, 0.0, 0.9, 0.05, 0.05])
    assert greedy_decode(model, one_source(), 6).captions == [[BOS, EOS]]
    assert beam_search(model, one_source(), 3, 6).caption == [BOS, EOS]


def test_greedy_stops_at_max_len():
    model = TableModel({}, [0.0, 0.0, 0.1, 0.6, 0.3])
    res = greedy_decode(model, one_source(2), 4)
    assert res.captions == [[BOS, 3, 3, 3]] * 2
    assert res.stop_reason == ["max_len", "max_len"]
    assert res.log_probs == pytest.approx([3 * np.log(0.6)] * 2)


def test_beam_beats_greedy_on_trap():
    model = greedy_trap()
    g = greedy_decode(model, one_source(), 4).captions[0]
    b = beam_search(model, one_source(), 2, 4)
    assert g == [BOS, 3, EOS]
    assert b.caption == [BOS, 4, EOS]
    assert b.score == pytest.approx(normalized_score(np.log(0.5 - 1e-3) + np.log(1 - 1e-9), b.caption))
    assert beam_search(model, one_source(), 1, 4).caption == g


def test_normalized_score():
    assert normalized_score(-6.0, [BOS, 3, 4, EOS]) == -2.0
    assert normalized_score(-1.0, [BOS]) == -1.0


def test_invalid_arguments():
    model = greedy_trap()
    with pytest.raises(ValueError):
        beam_search(model, one_source(), 0, 4)
    with pytest.raises(ValueError):
        beam_search(model, one_source(2), 2, 4)
    with pytest.raises(ValueError):
        greedy_decode(model, one_source(), 1)


def random_model(seed, V=4, attention=False):
    cfg = ModelConfig(src_vocab=6, tgt_vocab=V, emb_dim=3, hidden_dim=4, attention=attention, init_bound=1.5)
    model = CaptionModel(cfg, rng=RngStream(seed))
    model.params["out.b"] += RngStream(seed).fork("bias").uniform(-1, 1, V)
    return model


def src_batch(seed):
    rng = RngStream(seed).fork("src")
    n = int(rng.integers(1, 4))
    return Batch(np.array([[BOS, EOS]]), np.ones((1, 2)), rng.integers(4, 6, (1, n)), np.ones((1, n)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), max_len=st.integers(2, 4), attention=st.booleans())
def test_full_width_beam_is_exhaustive(seed, max_len, attention):
    model = random_model(seed, attention=attention)
    batch = src_batch(seed)
    best, best_score = exhaustive_decode(model, batch, max_len)
    res = beam_search(model, batch, 4 ** (max_len - 1), max_len)
    assert res.caption == best
    assert res.score == pytest.approx(best_score, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), max_len=st.integers(2, 6))
def test_beam_width_one_equals_greedy(seed, max_len):
    model = random_model(seed, V=5)
    batch = src_batch(seed)
    assert beam_search(model, batch, 1, max_len).caption == greedy_decode(model, batch, max_len).captions[0]


def test_decoding_is_deterministic():
    model = random_model(3, V=6, attention=True)
    batch = src_batch(3)
    a = beam_search(model, batch, 3, 6)
    b = beam_search(model, batch, 3, 6)
    assert a == b
    assert greedy_decode(model, batch, 6).captions == greedy_decode(model, batch, 6).captions


def test_batched_greedy_matches_one_at_a_time():
    from arnet.seq2seq.data import Example
    model = random_model(8, V=6)
    rng = RngStream(1)
    examples = [Example(list(rng.integers(4, 6, int(rng.integers(1, 5)))), [BOS, EOS], k) for k in range(7)]
    batched = decode_corpus(model, examples, 6, beam_size=1, batch_size=4)
    single = [decode_corpus(model, [e], 6, beam_size=1)[0] for e in examples]
    assert batched == single
