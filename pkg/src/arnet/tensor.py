"""Dense float64 primitives shared by every layer.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Most functions accept an optional leading batch axis so the same code serves
single examples and mini-batches.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand dimensions do not line up."""


def as_float(x) -> np.ndarray:
    """Float array view of ``x``; extended-precision input is kept as is."""
    arr = np.asarray(x)
    if arr.dtype == DTYPE or arr.dtype == np.longdouble:
        return arr
    return arr.astype(DTYPE)


def as_vector(x, name="x") -> np.ndarray:
    arr = as_float(x)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(w, name="W") -> np.ndarray:
    arr = as_float(w)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def affine(W, x, b) -> np.ndarray:
    """Return ``W @ x + b``; ``x`` may carry a leading batch axis."""
    W = as_matrix(W, "W")
    x = as_float(x)
    b = as_vector(b, "b")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"W has {W.shape[1]} columns but x has length {x.shape[-1]} "
                         f"(W {W.shape}, x {x.shape})")
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"W has {W.shape[0]} rows but b has length {b.shape[0]} "
                         f"(W {W.shape}, b {b.shape})")
    return x @ W.T + b


def sigmoid(x) -> np.ndarray:
    # tanh form is overflow-free and cheaper than exp + divide
    return 0.5 * np.tanh(0.5 * as_float(x)) + 0.5


def tanh(x) -> np.ndarray:
    return np.tanh(as_float(x))


def activations(x, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x, axis=-1) -> np.ndarray:
    x = as_float(x)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1) -> np.ndarray:
    x = as_float(x)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class RngStream:
    """Seeded random stream (PCG64) with serializable state.

    Never share one stream between workers; derive a child with :meth:`fork`.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def fork(self, tag: str) -> "RngStream":
        """Independent stream derived from (seed, tag); does not advance self."""
        key = [self.seed & 0xFFFFFFFF, self.seed >> 32] + list(tag.encode("utf-8"))
        derived = int(np.random.SeedSequence(key).generate_state(2, np.uint32).view(np.uint64)[0])
        return RngStream(derived)

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def bernoulli(self, p, size) -> np.ndarray:
        return self._gen.random(size) < p

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def get_state(self) -> dict:
        return {"seed": self.seed, "bit_generator": self._gen.bit_generator.state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = state["bit_generator"]


def init_uniform(rows: int, cols: int, bound: float, rng: RngStream) -> np.ndarray:
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=DTYPE)
    return rng.uniform(-bound, bound, (rows, cols))
