"""LSTM transition operator with an exact backward pass.

Gate rows of ``T`` are stacked in the fixed order ``[i; f; o; g]`` and the
columns act on the concatenation ``(x; h_prev)``.  Every array may carry a
leading batch axis; the backward pass sums parameter gradients over it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .tensor import as_float, DTYPE, RngStream, ShapeError, init_uniform

GATE_ORDER = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    T: np.ndarray  # (4H, D + H)
    bias: np.ndarray  # (4H,)

    def __post_init__(self):
        self.T = as_float(self.T)
        self.bias = as_float(self.bias)
        rows, cols = self.T.shape
        if rows % 4 or self.bias.shape != (rows,) or cols < rows // 4:
            raise ShapeError(f"inconsistent LSTM shapes T {self.T.shape}, bias {self.bias.shape}")

    @property
    def hidden_dim(self) -> int:
        return self.T.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.T.shape[1] - self.hidden_dim

    @classmethod
    def init(cls, input_dim, hidden_dim, rng: RngStream, bound=0.08, forget_bias=1.0):
        T = init_uniform(4 * hidden_dim, input_dim + hidden_dim, bound, rng)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = forget_bias
        return cls(T, bias)


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim, batch=None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


class LstmGrads(NamedTuple):
    T: np.ndarray
    bias: np.ndarray


@dataclass
class StepCache:
    xh: np.ndarray  # concatenated (x; h_prev)
    act: np.ndarray  # post-activation gates, stacked [i f o g]
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    g_mask: Optional[np.ndarray] = None  # recurrent-dropout mask on g

    def _gate(self, k):
        H = self.c.shape[-1]
        return self.act[..., k * H:(k + 1) * H]

    i = property(lambda self: self._gate(0))
    f = property(lambda self: self._gate(1))
    o = property(lambda self: self._gate(2))
    g = property(lambda self: self._gate(3))

    @property
    def x(self):
        return self.xh[..., :self.xh.shape[-1] - self.c.shape[-1]]

    @property
    def h_prev(self):
        return self.xh[..., self.xh.shape[-1] - self.c.shape[-1]:]


def cell_forward(T, bias, inp, c_prev, g_mask=None):
    """Gate algebra on an already concatenated input ``inp``."""
    H = T.shape[0] // 4
    act = inp @ T.T
    act += bias
    # in place: sigmoid(a) = 0.5 * tanh(0.5 a) + 0.5 on [i f o], tanh on g
    sig = act[..., :3 * H]
    sig *= 0.5
    np.tanh(sig, out=sig)
    sig *= 0.5
    sig += 0.5
    g = act[..., 3 * H:]
    np.tanh(g, out=g)
    i, f, o = act[..., :H], act[..., H:2 * H], act[..., 2 * H:3 * H]
    if g_mask is not None:
        g = g * g_mask
    c = f * c_prev
    c += i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LstmState(h, c), StepCache(inp, act, c_prev, c, tanh_c, g_mask)


def cell_backward(T, cache: StepCache, dh, dc):
    """Returns ``(LstmGrads, d_inp, dc_prev)`` for :func:`cell_forward`."""
    H = T.shape[0] // 4
    if cache.act.shape[-1] != 4 * H or cache.xh.shape[-1] != T.shape[1]:
        raise ShapeError(f"step cache (gates {cache.act.shape}, input {cache.xh.shape}) "
                         f"does not match parameters T {T.shape}")
    act = cache.act
    i, f, o, g = (act[..., k * H:(k + 1) * H] for k in range(4))
    g_eff = g if cache.g_mask is None else g * cache.g_mask
    dc_t = 1.0 - cache.tanh_c ** 2
    dc_t *= o
    dc_t *= dh
    dc_t += dc
    da = np.empty_like(act)
    # sigmoid' = s (1 - s), tanh' = 1 - t^2
    np.multiply(dc_t, g_eff, out=da[..., :H])
    np.multiply(dc_t, cache.c_prev, out=da[..., H:2 * H])
    np.multiply(dh, cache.tanh_c, out=da[..., 2 * H:3 * H])
    sig = act[..., :3 * H]
    da[..., :3 * H] *= sig
    da[..., :3 * H] *= 1.0 - sig
    dg = np.multiply(dc_t, i, out=da[..., 3 * H:])
    if cache.g_mask is not None:
        dg *= cache.g_mask
    dg *= 1.0 - g * g
    da2 = da.reshape(-1, 4 * H)
    inp2 = cache.xh.reshape(-1, cache.xh.shape[-1])
    return LstmGrads(da2.T @ inp2, da2.sum(axis=0)), da @ T, dc_t * f


def lstm_step(params: LstmParams, x, state: LstmState, g_mask=None):
    """One transition ``(x, h_prev, c_prev) -> (h, c)``; returns ``(state, cache)``."""
    H = params.hidden_dim
    x = as_float(x)
    h_prev, c_prev = state
    if x.shape[-1] != params.input_dim or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(f"LSTM expects x[..., {params.input_dim}] and state[..., {H}], "
                         f"got x {x.shape}, h {h_prev.shape}, c {c_prev.shape}")
    return cell_forward(params.T, params.bias, np.concatenate([x, h_prev], axis=-1), c_prev, g_mask)


def lstm_step_backward(params: LstmParams, cache: StepCache, dh, dc):
    """Backpropagate ``(dh, dc)`` through one step.

    Returns ``(LstmGrads, dx, (dh_prev, dc_prev))``.
    """
    grads, dinp, dc_prev = cell_backward(params.T, cache, as_float(dh),
                                         as_float(dc))
    D = params.input_dim
    return grads, dinp[..., :D], (dinp[..., D:], dc_prev)


@dataclass
class RegularizerConfig:
    mode: str = "none"  # none | zoneout | recurrent_dropout
    zoneout_rate_h: float = 0.1
    zoneout_rate_c: float = 0.1
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.mode not in ("none", "zoneout", "recurrent_dropout"):
            raise ValueError(f"unknown regularizer mode {self.mode!r}")
        for name in ("zoneout_rate_h", "zoneout_rate_c", "dropout_rate"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {r}")


def zoneout_masks(cfg: RegularizerConfig, rng: Optional[RngStream], shape, training: bool):
    """Per-unit keep-previous weights for h and c.

    Training draws Bernoulli masks; inference returns the constant rates,
    which turns the mix into the expected-value blend.
    """
    if training:
        return (rng.bernoulli(cfg.zoneout_rate_h, shape).astype(DTYPE),
                rng.bernoulli(cfg.zoneout_rate_c, shape).astype(DTYPE))
    return np.full(shape, cfg.zoneout_rate_h), np.full(shape, cfg.zoneout_rate_c)


def apply_zoneout(prev: LstmState, new: LstmState, cfg: RegularizerConfig,
                  rng: Optional[RngStream], training: bool, masks=None) -> LstmState:
    if cfg.mode != "zoneout":
        raise ValueError("apply_zoneout needs a zoneout regularizer config")
    keep_h, keep_c = masks if masks is not None else zoneout_masks(cfg, rng, new.h.shape, training)
    return LstmState(keep_h * prev.h + (1.0 - keep_h) * new.h,
                     keep_c * prev.c + (1.0 - keep_c) * new.c)


def dropout_mask(rate: float, rng: Optional[RngStream], shape, training: bool):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return None
    return rng.bernoulli(1.0 - rate, shape).astype(DTYPE) / (1.0 - rate)


def apply_recurrent_dropout(g_t, rate: float, rng: Optional[RngStream], training: bool):
    """Inverted dropout on the candidate update ``g``; identity at inference."""
    g_t = as_float(g_t)
    mask = dropout_mask(rate, rng, g_t.shape, training)
    return g_t if mask is None else g_t * mask


# ---------------------------------------------------------------------------
# sequence runner


@dataclass
class SequenceCache:
    steps: list = field(default_factory=list)
    keep: list = field(default_factory=list)  # zoneout (keep_h, keep_c) per step
    mask: Optional[np.ndarray] = None  # (T, B, 1)


def step_regularized(T, bias, inp, state: LstmState, reg: Optional[RegularizerConfig], rng,
                     training, step_mask=None):
    """Cell step + optional regularizer + optional padding carry.

    ``inp`` is the full gate input (it already contains ``state.h``).
    Returns ``(new_state, cache, keep)``.
    """
    g_mask = None
    if reg is not None and reg.mode == "recurrent_dropout":
        g_mask = dropout_mask(reg.dropout_rate, rng, state.h.shape, training)
    new, cache = cell_forward(T, bias, inp, state.c, g_mask)
    keep = None
    if reg is not None and reg.mode == "zoneout":
        keep = zoneout_masks(reg, rng, new.h.shape, training)
        new = apply_zoneout(state, new, reg, rng, training, masks=keep)
    if step_mask is not None:
        new = LstmState(step_mask * new.h + (1.0 - step_mask) * state.h,
                        step_mask * new.c + (1.0 - step_mask) * state.c)
    return new, cache, keep


def step_regularized_backward(T, cache, keep, dh, dc, step_mask=None):
    """Inverse of :func:`step_regularized`.

    Returns ``(LstmGrads, d_inp, dh_skip, dc_prev)`` where ``dh_skip`` is the
    part of dL/dh_prev that bypasses the gates (zoneout / padding carry); the
    caller adds the h-slice of ``d_inp`` to it.
    """
    dh_skip = dc_skip = 0.0
    if step_mask is not None:
        dh_skip, dc_skip = (1.0 - step_mask) * dh, (1.0 - step_mask) * dc
        dh, dc = step_mask * dh, step_mask * dc
    if keep is not None:
        keep_h, keep_c = keep
        dh_skip = dh_skip + keep_h * dh
        dc_skip = dc_skip + keep_c * dc
        dh, dc = (1.0 - keep_h) * dh, (1.0 - keep_c) * dc
    grads, dinp, dc_prev = cell_backward(T, cache, dh, dc)
    return grads, dinp, dh_skip, dc_prev + dc_skip


def run_lstm(params: LstmParams, xs, state0: Optional[LstmState] = None, mask=None,
             reg: Optional[RegularizerConfig] = None, rng: Optional[RngStream] = None,
             training: bool = False):
    """Unroll over ``xs`` of shape (T, B, D).

    ``mask`` (T, B) marks real positions; at padded positions the state is
    carried through unchanged.  Returns ``(hs, final_state, cache)``.
    """
    xs = as_float(xs)
    T_len, B = xs.shape[0], xs.shape[1]
    state = state0 if state0 is not None else LstmState.zeros(params.hidden_dim, B)
    m = None if mask is None else as_float(mask)[:, :, None]
    hs = np.empty((T_len, B, params.hidden_dim), dtype=np.result_type(xs, params.T))
    cache = SequenceCache(mask=m)
    for t in range(T_len):
        inp = np.concatenate([xs[t], state.h], axis=-1)
        state, step, keep = step_regularized(params.T, params.bias, inp, state, reg, rng,
                                             training, None if m is None else m[t])
        cache.steps.append(step)
        cache.keep.append(keep)
        hs[t] = state.h
    return hs, state, cache


def run_lstm_backward(params: LstmParams, cache: SequenceCache, dhs, dfinal: Optional[LstmState] = None):
    """BPTT through :func:`run_lstm`; returns ``(LstmGrads, dxs, dstate0)``."""
    T_len = len(cache.steps)
    H = params.hidden_dim
    shape = cache.steps[0].c.shape if T_len else (0, H)
    dh_next = np.zeros(shape) if dfinal is None else as_float(dfinal.h).copy()
    dc_next = np.zeros(shape) if dfinal is None else as_float(dfinal.c).copy()
    dT = np.zeros_like(params.T)
    db = np.zeros_like(params.bias)
    D = params.input_dim
    dxs = np.empty((T_len,) + shape[:-1] + (D,))
    for t in range(T_len - 1, -1, -1):
        dh = dh_next + dhs[t] if dhs is not None else dh_next
        m = None if cache.mask is None else cache.mask[t]
        grads, dinp, dh_skip, dc_next = step_regularized_backward(
            params.T, cache.steps[t], cache.keep[t], dh, dc_next, m)
        dh_next = dinp[..., D:] + dh_skip
        dT += grads.T
        db += grads.bias
        dxs[t] = dinp[..., :D]
    return LstmGrads(dT, db), dxs, LstmState(dh_next, dc_next)
