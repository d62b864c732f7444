"""Auto-reconstructor: an LSTM reading the host network's hidden states and
regressing each previous state from the current one.

At step t (t = 2..N) the reconstructor consumes ``h_t`` and predicts
``h_hat_{t-1} = w_fc h'_t + b_fc``; the penalty is the squared Euclidean
error ``||h_{t-1} - h_hat_{t-1}||^2``, summed over steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .lstm import LstmGrads, LstmParams, LstmState, StepCache, lstm_step, lstm_step_backward
from .tensor import as_float, RngStream, ShapeError, init_uniform

ArnetState = LstmState


@dataclass
class ArnetParams:
    cell: LstmParams  # input_dim = H_dec, hidden_dim = H_ar
    w_fc: np.ndarray  # (H_dec, H_ar)
    b_fc: np.ndarray  # (H_dec,)

    def __post_init__(self):
        if self.w_fc.shape != (self.cell.input_dim, self.cell.hidden_dim) or \
                self.b_fc.shape != (self.cell.input_dim,):
            raise ShapeError(f"reconstruction map {self.w_fc.shape}/{self.b_fc.shape} does not fit "
                             f"cell ({self.cell.input_dim} -> {self.cell.hidden_dim})")

    @classmethod
    def init(cls, host_dim, hidden_dim, rng: RngStream, bound=0.08):
        cell = LstmParams.init(host_dim, hidden_dim, rng, bound)
        return cls(cell, init_uniform(host_dim, hidden_dim, bound, rng), np.zeros(host_dim))


class ArnetGrads(NamedTuple):
    cell: LstmGrads
    w_fc: np.ndarray
    b_fc: np.ndarray


@dataclass
class ArnetStepCache:
    cell: StepCache
    h_ar: np.ndarray


def arnet_step(params: ArnetParams, h_t, state: ArnetState):
    """Returns ``(state, reconstructed h_{t-1}, cache)``."""
    h_t = as_float(h_t)
    if h_t.shape[-1] != params.cell.input_dim:
        raise ShapeError(f"reconstructor expects host states of width {params.cell.input_dim}, "
                         f"got {h_t.shape}")
    new, cache = lstm_step(params.cell, h_t, state)
    recon = new.h @ params.w_fc.T + params.b_fc
    return new, recon, ArnetStepCache(cache, new.h)


def arnet_loss(reconstructed, h_prev) -> float:
    reconstructed = as_float(reconstructed)
    h_prev = as_float(h_prev)
    if reconstructed.shape != h_prev.shape:
        raise ShapeError(f"reconstruction {reconstructed.shape} vs target {h_prev.shape}")
    diff = h_prev - reconstructed
    return np.sum(diff * diff)


@dataclass
class ArnetPass:
    total: float
    per_step: np.ndarray  # (N-1,) or (N-1, B): losses for targets h_1..h_{N-1}
    grads: Optional[ArnetGrads]
    d_hiddens: np.ndarray  # same shape as the host hidden sequence


def arnet_sequence_pass(params: ArnetParams, hiddens, mask=None, need_grads=True) -> ArnetPass:
    """Run the reconstructor over ``hiddens`` (N, H) or (N, B, H).

    ``mask`` (N,) / (N, B) marks valid host states; a step t contributes only
    when both ``h_t`` and ``h_{t-1}`` are valid.  Returns the summed loss
    (over time and batch) and gradients w.r.t. the parameters and each
    host hidden state (as reconstructor input and as target).
    """
    hs = as_float(hiddens)
    N = hs.shape[0]
    H_ar = params.cell.hidden_dim
    batch_shape = hs.shape[1:-1]
    if N < 2:
        empty = ArnetGrads(LstmGrads(np.zeros_like(params.cell.T), np.zeros_like(params.cell.bias)),
                           np.zeros_like(params.w_fc), np.zeros_like(params.b_fc))
        return ArnetPass(0.0, np.zeros((0,) + batch_shape), empty if need_grads else None,
                         np.zeros_like(hs))
    if mask is None:
        pair = np.ones((N - 1,) + batch_shape)
    else:
        m = as_float(mask)
        pair = m[1:] * m[:-1]

    state = ArnetState(np.zeros(batch_shape + (H_ar,)), np.zeros(batch_shape + (H_ar,)))
    caches, residuals = [], []
    per_step = np.empty((N - 1,) + batch_shape, dtype=np.result_type(hs, params.cell.T))
    for t in range(1, N):
        state, recon, cache = arnet_step(params, hs[t], state)
        diff = (recon - hs[t - 1]) * pair[t - 1][..., None]
        per_step[t - 1] = np.sum(diff * diff, axis=-1)
        caches.append(cache)
        residuals.append(diff)
    total = per_step.sum()
    if not need_grads:
        return ArnetPass(total, per_step, None, np.zeros_like(hs))

    dT = np.zeros_like(params.cell.T)
    db = np.zeros_like(params.cell.bias)
    dW = np.zeros_like(params.w_fc)
    dbfc = np.zeros_like(params.b_fc)
    d_hs = np.zeros_like(hs)
    dh_next = np.zeros(batch_shape + (H_ar,))
    dc_next = np.zeros(batch_shape + (H_ar,))
    for t in range(N - 1, 0, -1):
        cache, diff = caches[t - 1], residuals[t - 1]
        drecon = 2.0 * diff
        d_hs[t - 1] -= drecon
        dr2 = drecon.reshape(-1, drecon.shape[-1])
        dW += dr2.T @ cache.h_ar.reshape(-1, H_ar)
        dbfc += dr2.sum(axis=0)
        dh = drecon @ params.w_fc + dh_next
        grads, dx, (dh_next, dc_next) = lstm_step_backward(params.cell, cache.cell, dh, dc_next)
        dT += grads.T
        db += grads.bias
        d_hs[t] += dx
    return ArnetPass(total, per_step, ArnetGrads(LstmGrads(dT, db), dW, dbfc), d_hs)
