"""Permuted sequential MNIST: one pixel per timestep through a single LSTM.

The reconstructor, when enabled, runs over the encoder hidden states of
every timestep (there is no decoder here).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .checkpoint import Checkpoint
from .lstm import LstmParams, LstmState, RegularizerConfig, run_lstm, run_lstm_backward
from .optim import clip_global_norm
from .reconstructor import ArnetParams, arnet_sequence_pass
from .seq2seq.data import DataError
from .seq2seq.training import Trainer
from .tensor import RngStream, ShapeError, init_uniform, log_softmax

N_PIXELS = 784
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(DataError):
    pass


class PermutationMismatchError(DataError):
    pass


@dataclass
class PixelSequence:
    pixels: np.ndarray  # (784,) in [0, 1]
    label: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (N_PIXELS,):
            raise ShapeError(f"pixel sequence must have length {N_PIXELS}, got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if not 0 <= int(self.label) <= 9:
            raise ValueError(f"label {self.label} outside 0..9")


@dataclass
class PixelDataset:
    """Images as rows of ``X`` (n, L) plus integer labels; ``perm_seed`` records the ordering applied."""

    X: np.ndarray
    y: np.ndarray
    perm_seed: Optional[int] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"images {self.X.shape} and labels {self.y.shape} disagree")

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, k):
        return PixelSequence(self.X[k], int(self.y[k]))

    def subset(self, idx):
        idx = np.asarray(idx)
        return PixelDataset(self.X[idx], self.y[idx], self.perm_seed)


class Permutation:
    """Fixed bijection over pixel positions; ``out[i] = in[order[i]]``."""

    def __init__(self, order, seed: Optional[int] = None):
        order = np.asarray(order)
        n = order.shape[0] if order.ndim == 1 else -1
        if n < 1 or not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("permutation must be a bijection over 0..n-1")
        self.order = order.astype(np.int64)
        self.seed = seed

    @classmethod
    def from_seed(cls, seed: int, n: int = N_PIXELS) -> "Permutation":
        return cls(RngStream(seed).fork("permutation").permutation(n), seed)

    @classmethod
    def identity(cls, n: int = N_PIXELS) -> "Permutation":
        return cls(np.arange(n))

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.shape[0])
        return Permutation(inv)

    def __len__(self):
        return self.order.shape[0]


def apply_permutation(seq, p: Permutation):
    """Reorder a :class:`PixelSequence` (or a raw array / dataset along its last axis)."""
    if isinstance(seq, PixelSequence):
        return PixelSequence(seq.pixels[p.order], seq.label)
    if isinstance(seq, PixelDataset):
        if seq.X.shape[1] != len(p):
            raise ShapeError(f"permutation over {len(p)} positions applied to length {seq.X.shape[1]}")
        return PixelDataset(seq.X[:, p.order], seq.y, p.seed)
    arr = np.asarray(seq)
    return arr[..., p.order]


# ---------------------------------------------------------------------------
# IDX files


def load_mnist_idx(images_path, labels_path) -> PixelDataset:
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    if len(img) != 16 + n * rows * cols:
        raise IdxFormatError(f"{images_path}: header declares {n} images of {rows}x{cols} "
                             f"but payload holds {len(img) - 16} bytes")
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    lmagic, ln = struct.unpack(">II", lab[:8])
    if lmagic != LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{lmagic:08x}, expected 0x{LABEL_MAGIC:08x}")
    if len(lab) != 8 + ln:
        raise IdxFormatError(f"{labels_path}: header declares {ln} labels but payload holds {len(lab) - 8}")
    if ln != n:
        raise IdxFormatError(f"image count {n} and label count {ln} disagree")
    X = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    if n and y.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {y.max()} outside 0..9")
    return PixelDataset(X, y)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (n, 28, 28) or (n, 784) and labels as IDX."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images.reshape(images.shape[0], 28, 28)
    images = images.astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------------------
# model


@dataclass
class PmnistModelConfig:
    hidden_dim: int = 128
    n_classes: int = 10
    input_dim: int = 1
    arnet_hidden: int = 0  # 0 -> hidden_dim
    init_bound: float = 0.08
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.n_classes < 2:
            raise ValueError("need hidden_dim >= 1 and at least two classes")
        if self.arnet_hidden == 0:
            self.arnet_hidden = self.hidden_dim


class Classified(NamedTuple):
    loss: float  # (ce + lam * l_ar) / B
    ce: float  # summed over the batch
    l_ar: float
    correct: int
    predictions: np.ndarray
    hiddens: np.ndarray  # (L, B, H)
    grads: Optional[dict]


class PmnistModel:
    def __init__(self, cfg: PmnistModelConfig, params: Optional[dict] = None, rng: Optional[RngStream] = None):
        self.cfg = cfg
        if params is None:
            if rng is None:
                raise ValueError("need either params or an rng for initialization")
            c = cfg
            enc = LstmParams.init(c.input_dim, c.hidden_dim, rng, c.init_bound, c.forget_bias)
            params = {"enc.T": enc.T, "enc.b": enc.bias,
                      "cls.W": init_uniform(c.n_classes, c.hidden_dim, c.init_bound, rng),
                      "cls.b": np.zeros(c.n_classes)}
        self.params = params
        expected = {"enc.T": (4 * cfg.hidden_dim, cfg.input_dim + cfg.hidden_dim),
                    "enc.b": (4 * cfg.hidden_dim,), "cls.W": (cfg.n_classes, cfg.hidden_dim),
                    "cls.b": (cfg.n_classes,)}
        for k, shape in expected.items():
            if k not in params or params[k].shape != shape:
                raise ShapeError(f"parameter {k} missing or not of shape {shape}")

    def add_arnet(self, rng: RngStream):
        c = self.cfg
        ar = ArnetParams.init(c.hidden_dim, c.arnet_hidden, rng, c.init_bound)
        self.params["ar.T"], self.params["ar.b"] = ar.cell.T, ar.cell.bias
        self.params["ar.fc.W"], self.params["ar.fc.b"] = ar.w_fc, ar.b_fc

    @property
    def has_arnet(self):
        return "ar.T" in self.params

    def base_names(self):
        return [k for k in self.params if not k.startswith("ar.")]

    def arnet(self):
        p = self.params
        return ArnetParams(LstmParams(p["ar.T"], p["ar.b"]), p["ar.fc.W"], p["ar.fc.b"])

    def forward(self, X, y=None, lam: float = 0.0, arnet: str = "off",
                reg: Optional[RegularizerConfig] = None, rng: Optional[RngStream] = None,
                training: bool = False, need_grads: bool = True) -> Classified:
        """Cross-entropy on the final hidden state, plus ``lam`` times the reconstruction loss."""
        if arnet not in ("off", "attached", "detached"):
            raise ValueError(f"unknown arnet mode {arnet!r}")
        if arnet != "off" and not self.has_arnet:
            raise ValueError("model has no reconstructor parameters")
        X = np.asarray(X, dtype=np.float64)
        B, L = X.shape[0], X.shape[1]
        xs = X.T.reshape(L, B, self.cfg.input_dim)
        p = self.params
        enc = LstmParams(p["enc.T"], p["enc.b"])
        hs, final, cache = run_lstm(enc, xs, reg=reg, rng=rng, training=training)
        logp = log_softmax(final.h @ p["cls.W"].T + p["cls.b"])
        pred = logp.argmax(axis=1)
        if y is None:
            return Classified(0.0, 0.0, 0.0, 0, pred, hs, None)
        y = np.asarray(y)
        rows = np.arange(B)
        ce = -logp[rows, y].sum()
        correct = int(np.sum(pred == y))
        ar_pass = None
        l_ar = 0.0
        if arnet != "off":
            ar_pass = arnet_sequence_pass(self.arnet(), hs, need_grads=need_grads)
            l_ar = ar_pass.total
        loss = (ce + lam * l_ar) / B
        if not need_grads:
            return Classified(loss, ce, l_ar, correct, pred, hs, None)

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dlogits = np.exp(logp)
        dlogits[rows, y] -= 1.0
        dlogits /= B
        grads["cls.W"] = dlogits.T @ final.h
        grads["cls.b"] = dlogits.sum(axis=0)
        dfinal_h = dlogits @ p["cls.W"]
        dhs = None
        if ar_pass is not None:
            w = lam / B
            ag = ar_pass.grads
            grads["ar.T"] = w * ag.cell.T
            grads["ar.b"] = w * ag.cell.bias
            grads["ar.fc.W"] = w * ag.w_fc
            grads["ar.fc.b"] = w * ag.b_fc
            if arnet == "attached":
                dhs = w * ar_pass.d_hiddens
        g, _, _ = run_lstm_backward(enc, cache, dhs, LstmState(dfinal_h, np.zeros_like(dfinal_h)))
        grads["enc.T"] = g.T
        grads["enc.b"] = g.bias
        return Classified(loss, ce, l_ar, correct, pred, hs, grads)

    def predict(self, X, batch_size: int = 256, reg=None) -> np.ndarray:
        out = [self.forward(X[s:s + batch_size], reg=reg).predictions for s in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model: PmnistModel, data: PixelDataset, reg=None, batch_size: int = 256) -> float:
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(model.predict(data.X, batch_size, reg) == data.y))


# ---------------------------------------------------------------------------
# training


@dataclass
class PmnistConfig:
    lam: float = 0.01
    lr_stage1: float = 1e-3
    lr_stage2: float = 5e-4
    batch_size: int = 64
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    early_stop_patience: int = 10
    early_stop_metric: str = "accuracy"
    epochs_stage1: int = 30
    epochs_stage2: int = 20
    seed: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    arnet: str = "attached"
    perm_seed: int = 0

    def __post_init__(self):
        if isinstance(self.regularizer, dict):
            self.regularizer = RegularizerConfig(**self.regularizer)
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> List[str]:
        errs = []
        if self.lam < 0:
            errs.append("lam must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.arnet not in ("attached", "detached", "off"):
            errs.append(f"arnet must be attached|detached|off, got {self.arnet!r}")
        if self.early_stop_metric != "accuracy":
            errs.append("early_stop_metric must be accuracy for classification")
        if min(self.lr_stage1, self.lr_stage2) <= 0:
            errs.append("learning rates must be positive")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            errs.append("epoch budgets must be >= 0")
        return errs


class PmnistTrainer(Trainer):
    """Two-stage classifier training; stage 2 adds the reconstructor over all encoder states."""

    task = "pmnist"

    def __init__(self, model: PmnistModel, train: PixelDataset, val: Optional[PixelDataset], cfg: PmnistConfig,
                 log=None):
        for name, d in (("training", train), ("validation", val)):
            if d is not None and len(d) and d.perm_seed != cfg.perm_seed:
                raise PermutationMismatchError(
                    f"{name} data prepared with permutation seed {d.perm_seed}, config says {cfg.perm_seed}")
        super().__init__(model, train, val if val is not None and len(val) else None, cfg, log)
        self.has_val = val is not None and len(val) > 0

    def train_epoch(self) -> dict:
        cfg = self.cfg
        mode, lam, _ = self._stage_settings()
        reg = cfg.regularizer if cfg.regularizer.mode != "none" else None
        trainable = None if self.stage == "stage2" else set(self.model.base_names())
        order = self.shuffle_rng.permutation(len(self.train))
        tot_loss = tot_ce = tot_ar = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out = self.model.forward(self.train.X[idx], self.train.y[idx], lam, mode, reg, self.noise_rng,
                                     training=True)
            clip_global_norm(out.grads, cfg.clip_norm)
            self.opt.step(out.grads, names=trainable)
            tot_loss += out.loss * len(idx)
            tot_ce += out.ce
            tot_ar += out.l_ar
            correct += out.correct
        n = len(self.train)
        return {"loss": tot_loss / n, "ce": tot_ce / n, "l_ar": tot_ar / n, "train_accuracy": correct / n}

    def validate(self) -> dict:
        reg = self.cfg.regularizer if self.cfg.regularizer.mode != "none" else None
        if not self.has_val:
            return None
        return {"accuracy": accuracy(self.model, self.val, reg)}

    @staticmethod
    def config_cls(**kw):
        return PmnistConfig(**kw)

    @staticmethod
    def load_model(ckpt: Checkpoint):
        return PmnistModel(PmnistModelConfig(**ckpt.meta["model"]),
                           {k: v.copy() for k, v in ckpt.params().items()})

    def extra_meta(self) -> dict:
        return {"perm_seed": self.cfg.perm_seed}


def classify_train(model: PmnistModel, train: PixelDataset, val: Optional[PixelDataset], cfg: PmnistConfig,
                   log=None, on_epoch=None, on_stage_end=None, trainer: Optional[PmnistTrainer] = None):
    """Stage 1 pre-trains the encoder; stage 2 trains encoder and reconstructor jointly.

    Returns ``(accuracy history, stage-2 checkpoint)``.
    """
    from .seq2seq.training import resume_two_stage
    tr = trainer or PmnistTrainer(model, train, val, cfg, log)
    _, ck2, history = resume_two_stage(tr, on_epoch, "pmnist", on_stage_end)
    return history, ck2


def classify_eval(ckpt: Checkpoint, data: PixelDataset, reg=None) -> float:
    """Accuracy of the checkpointed classifier; refuses data under a different permutation."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    seed = ckpt.meta.get("perm_seed")
    if seed is None or data.perm_seed != seed:
        raise PermutationMismatchError(
            f"checkpoint trained under permutation seed {seed}, data prepared with {data.perm_seed}")
    model = PmnistTrainer.load_model(ckpt)
    return accuracy(model, data, reg)
