"""Additive soft attention and the attentive LSTM step.

Scores are ``v . tanh(W_s s_i + W_h h_prev)``; the context ``z`` is the
softmax-weighted sum of the local vectors and enters the gates next to
``(x; h_prev)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .lstm import LstmState, StepCache, cell_backward, cell_forward
from .tensor import as_float, RngStream, ShapeError, init_uniform


@dataclass
class AttentionParams:
    W_s: np.ndarray  # (A, Ds)
    W_h: np.ndarray  # (A, H)
    v: np.ndarray  # (A,)

    def __post_init__(self):
        A = self.v.shape[0]
        if A < 1 or self.W_s.shape[0] != A or self.W_h.shape[0] != A:
            raise ShapeError(f"attention shapes disagree: W_s {self.W_s.shape}, "
                             f"W_h {self.W_h.shape}, v {self.v.shape}")

    @property
    def attn_dim(self):
        return self.v.shape[0]

    @classmethod
    def init(cls, source_dim, hidden_dim, attn_dim, rng: RngStream, bound=0.08):
        return cls(init_uniform(attn_dim, source_dim, bound, rng),
                   init_uniform(attn_dim, hidden_dim, bound, rng),
                   init_uniform(1, attn_dim, bound, rng)[0])


class AttentionGrads(NamedTuple):
    W_s: np.ndarray
    W_h: np.ndarray
    v: np.ndarray


@dataclass
class AttentiveLstmParams:
    """Gate transform over ``(x; h_prev; z)``."""

    T: np.ndarray  # (4H, D + H + Dz)
    bias: np.ndarray
    input_dim: int
    context_dim: int

    def __post_init__(self):
        H = self.T.shape[0] // 4
        if self.T.shape != (4 * H, self.input_dim + H + self.context_dim) or self.bias.shape != (4 * H,):
            raise ShapeError(f"attentive LSTM shapes disagree: T {self.T.shape}, bias {self.bias.shape}, "
                             f"D={self.input_dim}, Dz={self.context_dim}")

    @property
    def hidden_dim(self):
        return self.T.shape[0] // 4

    @classmethod
    def init(cls, input_dim, hidden_dim, context_dim, rng: RngStream, bound=0.08, forget_bias=1.0):
        T = init_uniform(4 * hidden_dim, input_dim + hidden_dim + context_dim, bound, rng)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = forget_bias
        return cls(T, bias, input_dim, context_dim)


@dataclass
class EncodedSource:
    """Global vector ``g`` plus the local vectors ``s`` (n, Ds)."""

    g: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.g = as_float(self.g)
        self.s = as_float(self.s)
        if self.s.ndim != 2 or self.s.shape[0] < 1:
            raise ShapeError(f"need at least one local vector, got s of shape {self.s.shape}")


@dataclass
class AttentionCache:
    s: np.ndarray  # (B, n, Ds)
    h_prev: np.ndarray  # (B, H)
    e: np.ndarray  # tanh hidden layer (B, n, A)
    weights: np.ndarray  # (B, n)


def project_source(params: AttentionParams, s):
    """``W_s s_i`` for every local vector; computed once per sequence."""
    return as_float(s) @ params.W_s.T


def attend_forward(params: AttentionParams, s, h_prev, s_mask=None, proj=None):
    """Batched attention.  ``s`` (B, n, Ds), ``h_prev`` (B, H), ``s_mask`` (B, n).

    Returns ``(z, weights, cache)``.
    """
    if proj is None:
        proj = project_source(params, s)
    e = np.tanh(proj + (h_prev @ params.W_h.T)[:, None, :])
    scores = e @ params.v
    if s_mask is not None:
        scores = np.where(s_mask > 0, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    z = np.einsum("bn,bnd->bd", w, s)
    return z, w, AttentionCache(s, h_prev, e, w)


def attend(params: AttentionParams, s, h_prev, s_mask=None):
    """Context vector and weights for one (unbatched or batched) query."""
    s = as_float(s)
    h_prev = as_float(h_prev)
    if s.shape[-2] == 0:
        raise ShapeError("attention over an empty set of local vectors")
    if s.shape[-1] != params.W_s.shape[1] or h_prev.shape[-1] != params.W_h.shape[1]:
        raise ShapeError(f"attention expects s[..., {params.W_s.shape[1]}] and "
                         f"h[..., {params.W_h.shape[1]}], got {s.shape} and {h_prev.shape}")
    single = s.ndim == 2
    if single:
        s, h_prev = s[None], h_prev[None]
        s_mask = None if s_mask is None else np.asarray(s_mask)[None]
    z, w, _ = attend_forward(params, s, h_prev, s_mask)
    return (z[0], w[0]) if single else (z, w)


def attend_backward_partial(params: AttentionParams, cache: AttentionCache, dz):
    """Backward through one attention call, leaving ``W_s s`` unreduced.

    Returns ``(dW_h, dv, dh_prev, ds, dproj)``; ``dproj`` (B, n, A) is the
    gradient w.r.t. the projected sources and should be summed over steps
    before :func:`project_source_backward`.
    """
    w, s, e = cache.weights, cache.s, cache.e
    ds = w[:, :, None] * dz[:, None, :]
    dw = np.einsum("bnd,bd->bn", s, dz)
    dscores = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    dv = np.einsum("bn,bna->a", dscores, e)
    dpre = dscores[:, :, None] * params.v * (1.0 - e ** 2)
    dq = dpre.sum(axis=1)  # gradient w.r.t. W_h h_prev
    dW_h = dq.T @ cache.h_prev
    dh_prev = dq @ params.W_h
    return dW_h, dv, dh_prev, ds, dpre


def project_source_backward(params: AttentionParams, s, dproj):
    """Returns ``(dW_s, ds)`` for :func:`project_source`."""
    dW_s = np.einsum("bna,bnd->ad", dproj, s)
    return dW_s, dproj @ params.W_s


def attention_backward(params: AttentionParams, cache: AttentionCache, dz):
    """Full backward of :func:`attend_forward` (batched).

    Returns ``(AttentionGrads, ds, dh_prev)``.
    """
    dW_h, dv, dh_prev, ds, dproj = attend_backward_partial(params, cache, dz)
    dW_s, ds_proj = project_source_backward(params, cache.s, dproj)
    return AttentionGrads(dW_s, dW_h, dv), ds + ds_proj, dh_prev


@dataclass
class AttentiveStepCache:
    cell: StepCache
    attn: AttentionCache


def attentive_lstm_step(params: AttentiveLstmParams, attn: AttentionParams, x, s, state: LstmState,
                        s_mask=None, proj=None, g_mask=None):
    """One attentive step on batched inputs: ``z`` from ``(s, h_prev)``, then gates over ``(x; h; z)``.

    Returns ``(state, z, cache)``.
    """
    x = as_float(x)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"attentive LSTM expects inputs of width {params.input_dim}, got {x.shape}")
    z, _, acache = attend_forward(attn, s, state.h, s_mask, proj)
    inp = np.concatenate([x, state.h, z], axis=-1)
    new, ccache = cell_forward(params.T, params.bias, inp, state.c, g_mask)
    return new, z, AttentiveStepCache(ccache, acache)


def attentive_lstm_step_backward(params: AttentiveLstmParams, attn: AttentionParams,
                                 cache: AttentiveStepCache, dh, dc):
    """Backward of :func:`attentive_lstm_step` with the source projection reduced.

    Returns ``(LstmGrads, AttentionGrads, dx, ds, (dh_prev, dc_prev))``.
    """
    grads, dinp, dc_prev = cell_backward(params.T, cache.cell, dh, dc)
    D, H = params.input_dim, params.hidden_dim
    dx, dh_prev, dz = dinp[..., :D], dinp[..., D:D + H], dinp[..., D + H:]
    agrads, ds, dh_att = attention_backward(attn, cache.attn, dz)
    return grads, agrads, dx, ds, (dh_prev + dh_att, dc_prev)
