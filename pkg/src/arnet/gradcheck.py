"""Central finite-difference checks of every analytic gradient.

Each scope builds small random problems whose scalar loss is a fixed random
projection of the module outputs (or the module's own training loss), then
compares every entry of every parameter tensor, and of the differentiable
inputs, against ``(L(x + eps) - L(x - eps)) / (2 eps)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .attention import AttentionParams, AttentiveLstmParams, attentive_lstm_step, attentive_lstm_step_backward
from .lstm import LstmParams, LstmState, RegularizerConfig, run_lstm, run_lstm_backward
from .reconstructor import ArnetParams, arnet_sequence_pass
from .tensor import RngStream

SCOPES = ("lstm", "attention", "arnet", "seq2seq", "pmnist")
EPS = 1e-5
DENOM_FLOOR = 1e-8


def relative_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)


@dataclass
class Problem:
    """``tensors`` are perturbed in place; ``loss()`` must re-read them every call."""

    tensors: Dict[str, np.ndarray]
    loss: Callable[[], float]
    grads: Callable[[], Dict[str, np.ndarray]]
    label: str = ""


def numeric_gradient(problem: Problem, name: str, eps: float = EPS, entries=None) -> np.ndarray:
    x = problem.tensors[name]
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    for k in idx:
        orig = flat[k]
        flat[k] = orig + eps
        lp = problem.loss()
        flat[k] = orig - eps
        lm = problem.loss()
        flat[k] = orig
        gflat[k] = (lp - lm) / (2.0 * eps)
    return out


def check_problem(problem: Problem, eps: float = EPS, entries: Optional[dict] = None,
                  extended: bool = True) -> Dict[str, float]:
    """Worst relative error per tensor for one problem.

    The analytic gradient is computed in float64.  With ``extended`` the
    finite-difference side re-evaluates the loss in ``np.longdouble`` so its
    rounding noise (about ``u * |L| / eps``) stays far below the tolerance
    even for entries whose true gradient is tiny.
    """
    analytic = problem.grads()
    originals = dict(problem.tensors)
    if extended:
        for k, v in originals.items():
            problem.tensors[k] = v.astype(np.longdouble)
    try:
        numeric = {}
        for name in originals:
            sel = None if entries is None else entries.get(name)
            numeric[name] = numeric_gradient(problem, name, eps, sel)
    finally:
        problem.tensors.update(originals)
    worst = {}
    for name in originals:
        sel = None if entries is None else entries.get(name)
        num = numeric[name]
        a = analytic[name]
        if sel is not None:
            a, num = a.reshape(-1)[sel], num.reshape(-1)[sel]
        worst[name] = float(relative_error(a, num).max()) if np.size(a) else 0.0
    return worst


@dataclass
class ScopeReport:
    scope: str
    trials: int
    tolerance: float
    worst: Dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def failures(self) -> List[str]:
        return sorted(k for k, v in self.worst.items() if not v <= self.tolerance)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {"scope": self.scope, "trials": self.trials, "tolerance": self.tolerance,
                "passed": self.passed, "failures": self.failures,
                "worst_relative_error": dict(sorted(self.worst.items())), "seconds": self.seconds}


# ---------------------------------------------------------------------------
# problem builders (one per scope); ``k`` is the trial index


def _proj(rng, shape):
    return rng.uniform(-1.0, 1.0, shape)


def lstm_problem(k: int, rng: RngStream) -> Problem:
    D, H, T_len, B = 3, 3, 4, 2
    modes = ("none", "zoneout", "recurrent_dropout")
    reg = RegularizerConfig(mode=modes[k % 3], zoneout_rate_h=0.3, zoneout_rate_c=0.4, dropout_rate=0.3)
    training = k % 2 == 0
    noise_seed = int(rng.integers(0, 2**31))
    prm = LstmParams(rng.uniform(-0.6, 0.6, (4 * H, D + H)), rng.uniform(-0.5, 0.5, 4 * H))
    t = {"T": prm.T, "bias": prm.bias, "xs": rng.uniform(-1, 1, (T_len, B, D)),
         "h0": rng.uniform(-0.5, 0.5, (B, H)), "c0": rng.uniform(-0.5, 0.5, (B, H))}
    mask = np.ones((T_len, B))
    mask[T_len - 1, 1] = 0.0  # one padded position
    R_h, R_c = _proj(rng, (T_len, B, H)), _proj(rng, (B, H))

    def run():
        return run_lstm(LstmParams(t["T"], t["bias"]), t["xs"], LstmState(t["h0"], t["c0"]), mask,
                        reg, RngStream(noise_seed), training)

    def loss():
        hs, final, _ = run()
        return np.sum(R_h * hs) + np.sum(R_c * final.c)

    def grads():
        hs, final, cache = run()
        g, dxs, d0 = run_lstm_backward(LstmParams(t["T"], t["bias"]), cache, R_h,
                                       LstmState(np.zeros((B, H)), R_c))
        return {"T": g.T, "bias": g.bias, "xs": dxs, "h0": d0.h, "c0": d0.c}

    return Problem(t, loss, grads, f"lstm[{reg.mode},{'train' if training else 'infer'}]")


def attention_problem(k: int, rng: RngStream) -> Problem:
    D, H, Ds, A, n, B, steps = 2, 3, 3, 3, 4, 2, 2
    prm = AttentiveLstmParams(rng.uniform(-0.6, 0.6, (4 * H, D + H + Ds)), rng.uniform(-0.5, 0.5, 4 * H), D, Ds)
    att = AttentionParams(rng.uniform(-0.8, 0.8, (A, Ds)), rng.uniform(-0.8, 0.8, (A, H)), rng.uniform(-1, 1, A))
    t = {"T": prm.T, "bias": prm.bias, "W_s": att.W_s, "W_h": att.W_h, "v": att.v,
         "s": rng.uniform(-1, 1, (B, n, Ds)), "xs": rng.uniform(-1, 1, (steps, B, D)),
         "h0": rng.uniform(-0.5, 0.5, (B, H)), "c0": rng.uniform(-0.5, 0.5, (B, H))}
    s_mask = np.ones((B, n))
    if k % 2:
        s_mask[1, n - 1] = 0.0
    R = _proj(rng, (steps, B, H))

    def run():
        p = AttentiveLstmParams(t["T"], t["bias"], D, Ds)
        a = AttentionParams(t["W_s"], t["W_h"], t["v"])
        state = LstmState(t["h0"], t["c0"])
        caches = []
        for j in range(steps):
            state, _, cache = attentive_lstm_step(p, a, t["xs"][j], t["s"], state, s_mask)
            caches.append((state, cache))
        return p, a, caches

    def loss():
        _, _, caches = run()
        return sum(np.sum(R[j] * st.h) for j, (st, _) in enumerate(caches))

    def grads():
        p, a, caches = run()
        out = {k2: np.zeros_like(v) for k2, v in t.items()}
        dh, dc = np.zeros((B, H)), np.zeros((B, H))
        for j in range(steps - 1, -1, -1):
            g, ag, dx, ds, (dh, dc) = attentive_lstm_step_backward(p, a, caches[j][1], dh + R[j], dc)
            out["T"] += g.T
            out["bias"] += g.bias
            out["W_s"] += ag.W_s
            out["W_h"] += ag.W_h
            out["v"] += ag.v
            out["s"] += ds
            out["xs"][j] = dx
        out["h0"], out["c0"] = dh, dc
        return out

    return Problem(t, loss, grads, "attention")


def arnet_problem(k: int, rng: RngStream) -> Problem:
    Hh, Ha, N, B = 3, 3, 5, 2
    prm = ArnetParams.init(Hh, Ha, rng, 0.6)
    t = {"T": prm.cell.T, "bias": prm.cell.bias + rng.uniform(-0.3, 0.3, 4 * Ha), "w_fc": prm.w_fc,
         "b_fc": rng.uniform(-0.3, 0.3, Hh), "hiddens": rng.uniform(-1, 1, (N, B, Hh))}
    mask = np.ones((N, B))
    if k % 2:
        mask[N - 1, 0] = 0.0

    def params():
        return ArnetParams(LstmParams(t["T"], t["bias"]), t["w_fc"], t["b_fc"])

    def loss():
        return arnet_sequence_pass(params(), t["hiddens"], mask, need_grads=False).total

    def grads():
        r = arnet_sequence_pass(params(), t["hiddens"], mask)
        return {"T": r.grads.cell.T, "bias": r.grads.cell.bias, "w_fc": r.grads.w_fc,
                "b_fc": r.grads.b_fc, "hiddens": r.d_hiddens}

    return Problem(t, loss, grads, "arnet")


def seq2seq_problem(k: int, rng: RngStream) -> Problem:
    from .seq2seq.data import Batch
    from .seq2seq.model import CaptionModel, ModelConfig
    from .seq2seq.vocab import BOS, EOS, PAD

    attention = k % 2 == 0
    init_mode = ("state", "input")[(k // 2) % 2]
    source = ("tokens", "features")[(k // 4) % 2]
    reg_mode = ("none", "zoneout", "recurrent_dropout")[k % 3]
    V, E, H = 6, 3, 3
    cfg = ModelConfig(source=source, src_vocab=V, tgt_vocab=V, emb_dim=E, hidden_dim=H, attention=attention,
                      attn_dim=3, g_dim=3 if source == "features" else 0,
                      s_dim=2 if source == "features" else 0, init_mode=init_mode, init_bound=1.0)
    model = CaptionModel(cfg, rng=rng)
    model.add_arnet(rng)
    for name in ("dec.b", "ar.b", "out.b", "ar.fc.b"):
        model.params[name] += rng.uniform(-0.3, 0.3, model.params[name].shape)
    B = 2
    tgt = np.array([[BOS, 4, 5, 4, EOS], [BOS, 5, EOS, PAD, PAD]])
    tmask = (np.arange(5)[None, :] < np.array([[5], [3]])).astype(float)
    if source == "tokens":
        src = np.array([[4, 5, 4], [5, 4, PAD]])
        smask = np.array([[1.0, 1, 1], [1, 1, 0]])
        batch = Batch(tgt, tmask, src, smask, None, None, [0, 1])
    else:
        g = rng.uniform(-1, 1, (B, 3))
        s = rng.uniform(-1, 1, (B, 3, 2))
        smask = np.array([[1.0, 1, 1], [1, 1, 0]])
        batch = Batch(tgt, tmask, None, smask, g, s, [0, 1])
    reg = None if reg_mode == "none" else RegularizerConfig(reg_mode, 0.3, 0.4, 0.3)
    noise_seed = int(rng.integers(0, 2**31))
    lam = 0.7

    def run(need):
        return model.teacher_forced(batch, lam=lam, arnet="attached", reg=reg, rng=RngStream(noise_seed),
                                    training=True, need_grads=need)

    def loss():
        return run(False).loss

    def grads():
        return run(True).grads

    label = f"seq2seq[{source},{'attn' if attention else 'plain'},{init_mode},{reg_mode}]"
    return Problem(model.params, loss, grads, label)


def pmnist_problem(k: int, rng: RngStream, length: int = 28, hidden: int = 4) -> Problem:
    from .pmnist import PmnistModel, PmnistModelConfig

    model = PmnistModel(PmnistModelConfig(hidden_dim=hidden, init_bound=0.6), rng=rng)
    model.add_arnet(rng)
    for name in ("enc.b", "ar.b", "cls.b"):
        model.params[name] += rng.uniform(-0.3, 0.3, model.params[name].shape)
    B = 3
    X = rng.random((B, length))
    y = rng.integers(0, 10, B)
    arnet = ("attached", "off")[k % 2]
    lam = 0.5

    def loss():
        return model.forward(X, y, lam, arnet, need_grads=False).loss

    def grads():
        return model.forward(X, y, lam, arnet).grads

    if arnet == "off":
        for name in [k2 for k2 in model.params if k2.startswith("ar.")]:
            del model.params[name]
    return Problem(model.params, loss, grads, f"pmnist[L={length},H={hidden},arnet={arnet}]")


BUILDERS = {"lstm": lstm_problem, "attention": attention_problem, "arnet": arnet_problem,
            "seq2seq": seq2seq_problem, "pmnist": pmnist_problem}


def run_scope(scope: str, trials: int = 20, tolerance: float = 1e-4, seed: int = 0, eps: float = EPS,
              corrupt: Optional[str] = None) -> ScopeReport:
    """Run ``trials`` random problems; the worst error per tensor is kept.

    ``corrupt`` names a tensor whose analytic gradient is sign-flipped, to
    exercise the detector.
    """
    if scope not in BUILDERS:
        raise ValueError(f"unknown scope {scope!r}; choose from {', '.join(SCOPES)}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    start = time.perf_counter()
    report = ScopeReport(scope, trials, tolerance)
    root = RngStream(seed).fork(scope)
    for k in range(trials):
        problem = BUILDERS[scope](k, root.fork(f"trial-{k}"))
        if corrupt is not None:
            base = problem.grads

            def flipped(base=base):
                g = dict(base())
                if corrupt not in g:
                    raise KeyError(f"no tensor named {corrupt!r} in scope {scope}")
                g[corrupt] = -g[corrupt]
                return g

            problem.grads = flipped
        for name, err in check_problem(problem, eps).items():
            report.worst[name] = max(report.worst.get(name, 0.0), err)
    report.seconds = time.perf_counter() - start
    return report
