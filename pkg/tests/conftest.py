import numpy as np
import pytest

from arnet.tensor import RngStream

EPS = 1e-5


def numeric_grads(f, arrays, eps=EPS):
    """Central differences of scalar ``f(arrays)`` w.r.t. every entry of every array.

    The loss is re-evaluated on long-double copies so finite-difference
    rounding stays well below the 1e-4 relative tolerance used in the tests.
    """
    ext = {k: np.array(v, dtype=np.longdouble) for k, v in arrays.items()}
    out = {}
    for name, x in ext.items():
        g = np.zeros(x.shape)
        flat = x.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = f(ext)
            flat[k] = orig - eps
            lm = f(ext)
            flat[k] = orig
            g.reshape(-1)[k] = float((lp - lm) / (2 * eps))
        out[name] = g
    return out


def max_rel_error(a, n):
    a, n = np.asarray(a, dtype=float), np.asarray(n, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))


@pytest.fixture
def rng():
    return RngStream(1234)


def exhaustive_decode(model, batch, max_len):
    """Best complete caption by length-normalized log-probability, by brute force.

    Every prefix is re-scored from the start state, so nothing is shared with
    the beam bookkeeping.  Complete means ending in EOS or holding
    ``max_len - 1`` generated tokens.
    """
    from arnet.seq2seq.vocab import BOS, EOS

    def score(caption):
        ds = model.start(batch)
        total = 0.0
        for prev, tok in zip(caption[:-1], caption[1:]):
            ds, logp = model.advance(ds, np.array([prev]))
            total += float(logp[0, tok])
        return total

    V = model.cfg.tgt_vocab
    best, best_score = None, -np.inf
    frontier = [[BOS]]
    while frontier:
        prefix = frontier.pop()
        for tok in range(V):
            cap = prefix + [tok]
            if tok == EOS or len(cap) == max_len:
                lp = score(cap)
                norm = lp / (len(cap) - 1)
                if norm > best_score:
                    best, best_score = cap, norm
            else:
                frontier.append(cap)
    return best, best_score


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    """Remember one criterion's outcome; all lines are printed in the terminal summary."""
    line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
