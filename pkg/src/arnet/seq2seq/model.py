"""Encoder-decoder caption model with an optional reconstructor.

All parameters live in one ordered ``dict`` of named float64 arrays so the
optimizer, checkpoints and gradient checks can treat them uniformly.  The
typed views (``LstmParams`` etc.) alias those arrays, so in-place updates
are seen everywhere.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..attention import (AttentionParams, AttentiveLstmParams, attend_backward_partial,
                         attend_forward, project_source, project_source_backward)
from ..lstm import (LstmParams, LstmState, RegularizerConfig, run_lstm, run_lstm_backward,
                    step_regularized, step_regularized_backward)
from ..reconstructor import ArnetParams, arnet_sequence_pass
from ..tensor import RngStream, ShapeError, init_uniform, log_softmax
from .data import Batch
from .schedule import scheduled_sampling_step
from .vocab import BOS


class AttentionNormalizationError(AssertionError):
    pass


@dataclass
class ModelConfig:
    source: str = "tokens"  # tokens | features
    src_vocab: int = 0
    tgt_vocab: int = 0
    emb_dim: int = 512
    hidden_dim: int = 512
    attention: bool = False
    attn_dim: int = 0  # 0 -> hidden_dim
    g_dim: int = 0  # feature sources only
    s_dim: int = 0
    init_mode: str = "state"  # state | input
    arnet_hidden: int = 0  # 0 -> hidden_dim
    init_bound: float = 0.08
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.source not in ("tokens", "features"):
            raise ValueError(f"unknown source kind {self.source!r}")
        if self.init_mode not in ("state", "input"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.tgt_vocab < 4:
            raise ValueError("target vocabulary must hold at least the reserved tokens")
        if self.source == "tokens":
            if self.src_vocab < 4:
                raise ValueError("source vocabulary must hold at least the reserved tokens")
            self.g_dim = self.s_dim = self.hidden_dim
        elif self.g_dim < 1 or self.s_dim < 1:
            raise ValueError("feature sources need g_dim and s_dim")
        if self.attn_dim == 0:
            self.attn_dim = self.hidden_dim
        if self.arnet_hidden == 0:
            self.arnet_hidden = self.hidden_dim


class TeacherForced(NamedTuple):
    loss: float  # (nll + lam * l_ar) / B
    nll: float  # summed over batch and time
    l_ar: float
    hiddens: np.ndarray  # (N-1, B, H)
    hidden_mask: np.ndarray  # (N-1, B)
    correct: int
    count: int
    exact: np.ndarray  # (B,) every teacher-forced prediction right
    grads: Optional[dict]
    attention_checks: int


class DecodeState(NamedTuple):
    state: LstmState
    s: Optional[np.ndarray] = None
    s_mask: Optional[np.ndarray] = None
    proj: Optional[np.ndarray] = None

    def select(self, rows):
        pick = lambda a: None if a is None else a[rows]
        return DecodeState(LstmState(self.state.h[rows], self.state.c[rows]),
                           pick(self.s), pick(self.s_mask), pick(self.proj))


class CaptionModel:
    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None, rng: Optional[RngStream] = None):
        self.cfg = cfg
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng for initialization")
            params = self._init_params(rng)
        self.params = params
        self._check_shapes()

    # ------------------------------------------------------------------ params

    def _init_params(self, rng: RngStream) -> dict:
        c = self.cfg
        b = c.init_bound
        p = {}
        if c.source == "tokens":
            p["enc.E"] = init_uniform(c.src_vocab, c.emb_dim, b, rng)
            enc = LstmParams.init(c.emb_dim, c.hidden_dim, rng, b, c.forget_bias)
            p["enc.T"], p["enc.b"] = enc.T, enc.bias
        p["dec.E"] = init_uniform(c.tgt_vocab, c.emb_dim, b, rng)
        if c.attention:
            dec = AttentiveLstmParams.init(c.emb_dim, c.hidden_dim, c.s_dim, rng, b, c.forget_bias)
            att = AttentionParams.init(c.s_dim, c.hidden_dim, c.attn_dim, rng, b)
            p["att.W_s"], p["att.W_h"], p["att.v"] = att.W_s, att.W_h, att.v
        else:
            dec = LstmParams.init(c.emb_dim, c.hidden_dim, rng, b, c.forget_bias)
        p["dec.T"], p["dec.b"] = dec.T, dec.bias
        if c.init_mode == "state":
            p["dec.init_h.W"] = init_uniform(c.hidden_dim, c.g_dim, b, rng)
            p["dec.init_h.b"] = np.zeros(c.hidden_dim)
            p["dec.init_c.W"] = init_uniform(c.hidden_dim, c.g_dim, b, rng)
            p["dec.init_c.b"] = np.zeros(c.hidden_dim)
        else:
            p["dec.img.W"] = init_uniform(c.emb_dim, c.g_dim, b, rng)
            p["dec.img.b"] = np.zeros(c.emb_dim)
        p["out.W"] = init_uniform(c.tgt_vocab, c.hidden_dim, b, rng)
        p["out.b"] = np.zeros(c.tgt_vocab)
        return p

    def add_arnet(self, rng: RngStream):
        """Attach freshly initialized reconstructor parameters."""
        c = self.cfg
        ar = ArnetParams.init(c.hidden_dim, c.arnet_hidden, rng, c.init_bound)
        self.params["ar.T"], self.params["ar.b"] = ar.cell.T, ar.cell.bias
        self.params["ar.fc.W"], self.params["ar.fc.b"] = ar.w_fc, ar.b_fc

    @property
    def has_arnet(self):
        return "ar.T" in self.params

    def _check_shapes(self):
        ref = CaptionModel._init_params(self, RngStream(0))
        for k, v in ref.items():
            if k not in self.params:
                raise ShapeError(f"missing parameter {k}")
            if self.params[k].shape != v.shape:
                raise ShapeError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")
        if self.has_arnet:
            self.arnet()

    def enc_cell(self):
        return LstmParams(self.params["enc.T"], self.params["enc.b"])

    def dec_cell(self):
        if self.cfg.attention:
            return AttentiveLstmParams(self.params["dec.T"], self.params["dec.b"],
                                       self.cfg.emb_dim, self.cfg.s_dim)
        return LstmParams(self.params["dec.T"], self.params["dec.b"])

    def attn(self):
        p = self.params
        return AttentionParams(p["att.W_s"], p["att.W_h"], p["att.v"])

    def arnet(self):
        p = self.params
        return ArnetParams(LstmParams(p["ar.T"], p["ar.b"]), p["ar.fc.W"], p["ar.fc.b"])

    def base_names(self):
        return [k for k in self.params if not k.startswith("ar.")]

    # ------------------------------------------------------------------ encoder

    def encode(self, batch: Batch):
        """Returns ``(g, s, s_mask, cache)``; s is (B, n, Ds)."""
        if self.cfg.source == "features":
            if batch.g is None:
                raise ShapeError("feature model fed a token batch")
            return batch.g, batch.s, batch.src_mask, None
        if batch.src is None:
            raise ShapeError("token model fed a feature batch")
        if batch.src.max() >= self.cfg.src_vocab:
            raise ValueError(f"source token id {batch.src.max()} outside vocabulary of {self.cfg.src_vocab}")
        xs = self.params["enc.E"][batch.src.T]  # (Ts, B, De)
        hs, final, cache = run_lstm(self.enc_cell(), xs, mask=batch.src_mask.T)
        return final.h, hs.transpose(1, 0, 2), batch.src_mask, cache

    def _encode_backward(self, batch, cache, dg, ds, grads):
        if self.cfg.source == "features":
            return
        dfinal = LstmState(dg, np.zeros_like(dg))
        g, dxs, _ = run_lstm_backward(self.enc_cell(), cache, ds.transpose(1, 0, 2), dfinal)
        grads["enc.T"] += g.T
        grads["enc.b"] += g.bias
        np.add.at(grads["enc.E"], batch.src.T, dxs)

    # ------------------------------------------------------------------ decoder step

    def _context(self, s, s_mask):
        if not self.cfg.attention:
            return None, None, None
        return s, s_mask, project_source(self.attn(), s)

    def _dec_step(self, x, state, ctx, reg, rng, training, step_mask=None, check=False):
        s, s_mask, proj = ctx
        if self.cfg.attention:
            z, w, acache = attend_forward(self.attn(), s, state.h, s_mask, proj)
            if check:
                err = np.abs(w.sum(axis=1) - 1.0).max()
                if not err <= 1e-9:
                    raise AttentionNormalizationError(f"attention weights sum off by {err:.3e}")
            inp = np.concatenate([x, state.h, z], axis=-1)
        else:
            acache = None
            inp = np.concatenate([x, state.h], axis=-1)
        new, ccache, keep = step_regularized(self.params["dec.T"], self.params["dec.b"], inp, state,
                                             reg, rng, training, step_mask)
        return new, (ccache, keep, acache, step_mask)

    def _dec_step_backward(self, cache, dh, dc, grads, acc):
        ccache, keep, acache, step_mask = cache
        g, dinp, dh_skip, dc_prev = step_regularized_backward(self.params["dec.T"], ccache, keep, dh, dc,
                                                              step_mask)
        grads["dec.T"] += g.T
        grads["dec.b"] += g.bias
        De, H = self.cfg.emb_dim, self.cfg.hidden_dim
        dx = dinp[:, :De]
        dh_prev = dinp[:, De:De + H] + dh_skip
        if acache is not None:
            dW_h, dv, dh_att, ds, dproj = attend_backward_partial(self.attn(), acache, dinp[:, De + H:])
            grads["att.W_h"] += dW_h
            grads["att.v"] += dv
            acc["ds"] += ds
            acc["dproj"] += dproj
            dh_prev = dh_prev + dh_att
        return dx, dh_prev, dc_prev

    def _initial_state(self, g, ctx, reg, rng, training):
        """State entering the first word step, plus its backward cache."""
        p = self.params
        B = g.shape[0]
        if self.cfg.init_mode == "state":
            h0 = np.tanh(g @ p["dec.init_h.W"].T + p["dec.init_h.b"])
            c0 = np.tanh(g @ p["dec.init_c.W"].T + p["dec.init_c.b"])
            return LstmState(h0, c0), ("state", g, h0, c0)
        x0 = g @ p["dec.img.W"].T + p["dec.img.b"]
        zero = LstmState.zeros(self.cfg.hidden_dim, B)
        state, cache = self._dec_step(x0, zero, ctx, reg, rng, training)
        return state, ("input", g, cache)

    def _initial_state_backward(self, icache, dh, dc, grads, acc):
        p = self.params
        if icache[0] == "state":
            _, g, h0, c0 = icache
            dph = dh * (1.0 - h0 ** 2)
            dpc = dc * (1.0 - c0 ** 2)
            grads["dec.init_h.W"] += dph.T @ g
            grads["dec.init_h.b"] += dph.sum(axis=0)
            grads["dec.init_c.W"] += dpc.T @ g
            grads["dec.init_c.b"] += dpc.sum(axis=0)
            return dph @ p["dec.init_h.W"] + dpc @ p["dec.init_c.W"]
        _, g, cache = icache
        dx0, _, _ = self._dec_step_backward(cache, dh, dc, grads, acc)
        grads["dec.img.W"] += dx0.T @ g
        grads["dec.img.b"] += dx0.sum(axis=0)
        return dx0 @ p["dec.img.W"]

    # ------------------------------------------------------------------ training pass

    def teacher_forced(self, batch: Batch, lam: float = 0.0, arnet: str = "off",
                       reg: Optional[RegularizerConfig] = None, rng: Optional[RngStream] = None,
                       training: bool = True, ss_prob: float = 1.0, need_grads: bool = True,
                       check_attention: bool = False) -> TeacherForced:
        """Teacher-forced pass over a batch, optionally with the reconstructor.

        ``arnet``: ``off`` (not run), ``attached`` (gradient reaches the host
        network) or ``detached`` (reconstructor trains on its own, host
        gradients withheld).  ``ss_prob`` < 1 enables scheduled sampling.
        The optimized objective is ``(nll + lam * l_ar) / B``.
        """
        if arnet not in ("off", "attached", "detached"):
            raise ValueError(f"unknown arnet mode {arnet!r}")
        if arnet != "off" and not self.has_arnet:
            raise ValueError("model has no reconstructor parameters")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        tgt, tmask = batch.tgt, batch.tgt_mask
        if tgt.max() >= self.cfg.tgt_vocab or tgt.min() < 0:
            raise ValueError(f"target token id outside vocabulary of {self.cfg.tgt_vocab}")
        if np.any(tgt[:, 0] != BOS):
            raise ValueError("every caption must start with BOS")
        p = self.params
        B, N = tgt.shape
        H = self.cfg.hidden_dim
        g, s, s_mask, enc_cache = self.encode(batch)
        ctx = self._context(s, s_mask)
        state, icache = self._initial_state(g, ctx, reg, rng, training)

        rows = np.arange(B)
        hiddens = np.empty((N - 1, B, H), dtype=np.result_type(*p.values()))
        steps = []
        nll = 0.0
        correct = count = 0
        exact = np.ones(B, dtype=bool)
        tokens = tgt[:, 0]
        checks = 0
        for t in range(N - 1):
            m = tmask[:, t + 1]
            x = p["dec.E"][tokens]
            state, cache = self._dec_step(x, state, ctx, reg, rng, training, m[:, None],
                                          check=check_attention)
            checks += int(check_attention and self.cfg.attention)
            hiddens[t] = state.h
            logp = log_softmax(state.h @ p["out.W"].T + p["out.b"])
            gold = tgt[:, t + 1]
            nll -= np.sum(logp[rows, gold] * m)
            pred = logp.argmax(axis=1)
            hit = (pred == gold)
            correct += int(np.sum(hit * m))
            count += int(m.sum())
            exact &= hit | (m == 0)
            steps.append((tokens, cache, logp, gold, m))
            if ss_prob < 1.0 and t + 1 < N - 1:
                tokens = scheduled_sampling_step(ss_prob, gold, pred, rng)
            else:
                tokens = gold
        hmask = tmask[:, 1:].T

        l_ar = 0.0
        ar_pass = None
        if arnet != "off":
            ar_pass = arnet_sequence_pass(self.arnet(), hiddens, hmask, need_grads=need_grads)
            l_ar = ar_pass.total
        loss = (nll + lam * l_ar) / B
        if not need_grads:
            return TeacherForced(loss, nll, l_ar, hiddens, hmask, correct, count, exact, None, checks)

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        acc = {}
        if self.cfg.attention:
            acc = {"ds": np.zeros_like(s), "dproj": np.zeros(s.shape[:2] + (self.cfg.attn_dim,))}
        scale = 1.0 / B
        d_hid = None
        if ar_pass is not None:
            w = lam * scale
            ag = ar_pass.grads
            grads["ar.T"] += w * ag.cell.T
            grads["ar.b"] += w * ag.cell.bias
            grads["ar.fc.W"] += w * ag.w_fc
            grads["ar.fc.b"] += w * ag.b_fc
            if arnet == "attached":
                d_hid = w * ar_pass.d_hiddens

        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        W_out = p["out.W"]
        for t in range(N - 2, -1, -1):
            tokens, cache, logp, gold, m = steps[t]
            dlogits = np.exp(logp)
            dlogits[rows, gold] -= 1.0
            dlogits *= (m * scale)[:, None]
            grads["out.W"] += dlogits.T @ hiddens[t]
            grads["out.b"] += dlogits.sum(axis=0)
            dh = dlogits @ W_out + dh_next
            if d_hid is not None:
                dh = dh + d_hid[t]
            dx, dh_next, dc_next = self._dec_step_backward(cache, dh, dc_next, grads, acc)
            np.add.at(grads["dec.E"], tokens, dx)
        dg = self._initial_state_backward(icache, dh_next, dc_next, grads, acc)
        if self.cfg.attention:
            dW_s, ds_proj = project_source_backward(self.attn(), s, acc["dproj"])
            grads["att.W_s"] += dW_s
            ds = acc["ds"] + ds_proj
        else:
            ds = np.zeros_like(s)
        self._encode_backward(batch, enc_cache, dg, ds, grads)
        return TeacherForced(loss, nll, l_ar, hiddens, hmask, correct, count, exact, grads, checks)

    # ------------------------------------------------------------------ incremental decoding

    def start(self, batch: Batch, reg: Optional[RegularizerConfig] = None) -> DecodeState:
        g, s, s_mask, _ = self.encode(batch)
        ctx = self._context(s, s_mask)
        state, _ = self._initial_state(g, ctx, reg, None, False)
        return DecodeState(state, *ctx)

    def advance(self, ds: DecodeState, tokens, reg: Optional[RegularizerConfig] = None):
        """Feed one token per row; returns ``(next DecodeState, log-probs (B, V))``."""
        x = self.params["dec.E"][np.asarray(tokens)]
        state, _ = self._dec_step(x, ds.state, (ds.s, ds.s_mask, ds.proj), reg, None, False)
        logp = log_softmax(state.h @ self.params["out.W"].T + self.params["out.b"])
        return DecodeState(state, ds.s, ds.s_mask, ds.proj), logp

    def to_dict(self):
        return asdict(self.cfg)
