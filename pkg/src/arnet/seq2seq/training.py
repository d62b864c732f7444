"""Two-stage training: NLL pre-training, then joint fine-tuning with the
reconstruction penalty."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..checkpoint import Checkpoint
from ..lstm import RegularizerConfig
from ..metrics import ScoredCorpus, bleu
from ..optim import Adam, clip_global_norm
from ..tensor import RngStream
from .data import make_batch
from .decoding import decode_corpus
from .model import CaptionModel, ModelConfig
from .schedule import gold_probability
from .vocab import BOS, EOS, PAD

HIGHER_IS_BETTER = {"bleu4": True, "token_acc": True, "exact": True, "nll": False, "accuracy": True}


def joint_loss(nll: float, total_l_ar: float, lam: float) -> float:
    """``nll + lam * sum_t L_AR^t``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return nll + lam * total_l_ar


@dataclass
class TrainingConfig:
    lam: float = 0.01
    lr_stage1: float = 5e-4
    lr_stage2: float = 1e-4
    batch_size: int = 16
    max_len: int = 32
    beam_size: int = 3
    scheduled_sampling: str = "off"  # off | linear
    ss_slope: float = 0.05
    ss_floor: float = 0.75
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    early_stop_patience: int = 10
    early_stop_metric: str = "bleu4"
    epochs_stage1: int = 30
    epochs_stage2: int = 20
    seed: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    arnet: str = "attached"  # stage-2 reconstructor mode: attached | detached | off
    check_attention: bool = False

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
        if self.beam_size < 1:
            errs.append("beam_size must be >= 1")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.max_len < 2:
            errs.append("max_len must be >= 2")
        if self.scheduled_sampling not in ("off", "linear"):
            errs.append(f"scheduled_sampling must be off|linear, got {self.scheduled_sampling!r}")
        if self.early_stop_metric not in ("bleu4", "token_acc", "exact", "nll"):
            errs.append(f"early_stop_metric must be one of {sorted(HIGHER_IS_BETTER)}")
        if self.arnet not in ("attached", "detached", "off"):
            errs.append(f"arnet must be attached|detached|off, got {self.arnet!r}")
        if min(self.lr_stage1, self.lr_stage2) <= 0:
            errs.append("learning rates must be positive")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            errs.append("epoch budgets must be >= 0")
        return errs


def evaluate(model: CaptionModel, examples, cfg: TrainingConfig, decode=True, batch_size=64) -> dict:
    """Teacher-forced NLL / token accuracy, plus greedy BLEU-4 and exact match."""
    reg = cfg.regularizer if cfg.regularizer.mode != "none" else None
    nll = 0.0
    correct = count = 0
    for start in range(0, len(examples), batch_size):
        batch = make_batch(examples[start:start + batch_size])
        tf = model.teacher_forced(batch, reg=reg, training=False, need_grads=False)
        nll += tf.nll
        correct += tf.correct
        count += tf.count
    out = {"nll": nll / max(1, count), "token_acc": correct / max(1, count)}
    if decode:
        hyps = decode_corpus(model, examples, cfg.max_len, 1, batch_size, reg)
        strip = lambda ids: [t for t in ids if t not in (BOS, EOS, PAD)]
        out["exact"] = float(np.mean([h == e.tgt for h, e in zip(hyps, examples)]))
        out["bleu4"] = bleu(ScoredCorpus.single([strip(h) for h in hyps], [strip(e.tgt) for e in examples]), 4)
    return out


class Trainer:
    """Owns the model, optimizer and random streams for one training run.

    Subclasses swap in another task by overriding ``train_epoch``,
    ``validate``, ``config_cls`` and ``load_model``.
    """

    task = "caption-seq"

    def __init__(self, model: CaptionModel, train, val, cfg: TrainingConfig,
                 log: Optional[Callable[[dict], None]] = None):
        if not train:
            raise ValueError("empty training set")
        self.model = model
        self.train = train
        self.val = val if val else train
        self.cfg = cfg
        self.log = log
        root = RngStream(cfg.seed)
        self.shuffle_rng = root.fork("shuffle")
        self.noise_rng = root.fork("noise")
        self.arnet_rng = root.fork("arnet-init")
        self.stage = "stage1"
        self.stage_epoch = 0
        self.total_epochs = 0
        self.best = None
        self.bad_epochs = 0
        self.best_params = None
        self.stage_done = False
        self.history = []
        # extra checkpoint metadata supplied by the caller (experiment snapshot, vocabularies)
        self.run_meta = {}
        self.opt = self._new_optimizer(cfg.lr_stage1)

    def _new_optimizer(self, lr):
        c = self.cfg
        return Adam(self.model.params, lr, c.adam_beta1, c.adam_beta2, c.adam_eps)

    def _stage_settings(self):
        if self.stage == "stage1":
            return "off", 0.0, self.cfg.epochs_stage1
        return self.cfg.arnet, self.cfg.lam, self.cfg.epochs_stage2

    def begin_stage2(self):
        if not self.model.has_arnet:
            self.model.add_arnet(self.arnet_rng)
        self.stage = "stage2"
        self.stage_epoch = 0
        self.best = None
        self.bad_epochs = 0
        self.best_params = None
        self.stage_done = False
        self.opt = self._new_optimizer(self.cfg.lr_stage2)

    def train_epoch(self) -> dict:
        cfg = self.cfg
        mode, lam, _ = self._stage_settings()
        reg = cfg.regularizer if cfg.regularizer.mode != "none" else None
        ss_prob = 1.0
        if cfg.scheduled_sampling == "linear":
            ss_prob = gold_probability(self.total_epochs, cfg.ss_slope, cfg.ss_floor)
        trainable = None if self.stage == "stage2" else set(self.model.base_names())
        order = self.shuffle_rng.permutation(len(self.train))
        tot_loss = tot_nll = tot_ar = 0.0
        n_seq = n_tok = correct = 0
        checks = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = make_batch([self.train[i] for i in order[start:start + cfg.batch_size]])
            tf = self.model.teacher_forced(batch, lam=lam, arnet=mode, reg=reg, rng=self.noise_rng,
                                           training=True, ss_prob=ss_prob,
                                           check_attention=cfg.check_attention)
            clip_global_norm(tf.grads, cfg.clip_norm)
            self.opt.step(tf.grads, names=trainable)
            tot_loss += tf.loss * batch.size
            tot_nll += tf.nll
            tot_ar += tf.l_ar
            n_seq += batch.size
            n_tok += tf.count
            correct += tf.correct
            checks += tf.attention_checks
        return {"loss": tot_loss / n_seq, "nll_per_token": tot_nll / max(1, n_tok),
                "l_ar": tot_ar / n_seq, "train_token_acc": correct / max(1, n_tok),
                "ss_prob": ss_prob, "attention_checks": checks}

    def run_stage(self, on_epoch: Optional[Callable[["Trainer", dict], None]] = None,
                  max_epochs: Optional[int] = None):
        """Train the current stage until its budget or early stopping, then restore the best epoch."""
        _, _, full_budget = self._stage_settings()
        budget = full_budget if max_epochs is None else min(full_budget, self.stage_epoch + max_epochs)
        higher = HIGHER_IS_BETTER[self.cfg.early_stop_metric]
        while not self.stage_done and self.stage_epoch < budget:
            stats = self.train_epoch()
            val = self.validate()
            # no held-out data: no early stopping, the latest epoch is kept
            metric = None if val is None else val[self.cfg.early_stop_metric]
            self.stage_epoch += 1
            self.total_epochs += 1
            improved = (metric is None or self.best is None
                        or (metric > self.best if higher else metric < self.best))
            if improved:
                self.best = metric
                self.bad_epochs = 0
                self.best_params = {k: v.copy() for k, v in self.model.params.items()}
            else:
                self.bad_epochs += 1
                if self.bad_epochs >= self.cfg.early_stop_patience:
                    self.stage_done = True
            row = {"epoch": self.total_epochs, "stage": self.stage, **stats,
                   **{f"val_{k}": v for k, v in (val or {}).items()}, "val_metric": metric}
            self.history.append(row)
            if self.log:
                self.log(row)
            if on_epoch:
                on_epoch(self, row)
        if self.stage_epoch >= full_budget:
            self.stage_done = True
        if self.stage_done and self.best_params is not None:
            for k, v in self.best_params.items():
                self.model.params[k][...] = v

    def validate(self) -> dict:
        return evaluate(self.model, self.val, self.cfg, decode=self.cfg.early_stop_metric in ("bleu4", "exact"))

    # ------------------------------------------------------------------ persistence

    @staticmethod
    def config_cls(**kw):
        return TrainingConfig(**kw)

    @staticmethod
    def load_model(ckpt: Checkpoint):
        return model_from_checkpoint(ckpt)

    def extra_meta(self) -> dict:
        return {}

    def checkpoint(self, task=None, extra_meta=None) -> Checkpoint:
        tensors = dict(self.model.params)
        tensors.update(self.opt.state_tensors())
        if self.best_params is not None:
            tensors.update({f"best.{k}": v for k, v in self.best_params.items()})
        meta = {
            "task": task or self.task,
            "stage": self.stage,
            "stage_epoch": self.stage_epoch,
            "total_epochs": self.total_epochs,
            "stage_done": self.stage_done,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "adam_t": self.opt.t,
            "model": asdict(self.model.cfg),
            "training": asdict(self.cfg),
            "rng": {"shuffle": self.shuffle_rng.get_state(), "noise": self.noise_rng.get_state(),
                    "arnet": self.arnet_rng.get_state()},
            "history": self.history,
        }
        meta.update(self.extra_meta())
        meta.update(self.run_meta)
        if extra_meta:
            meta.update(extra_meta)
        return Checkpoint(meta, tensors)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, train, val, cfg=None, log=None, **kw):
        meta = ckpt.meta
        cfg = cfg or cls.config_cls(**meta["training"])
        model = cls.load_model(ckpt)
        tr = cls(model, train, val, cfg, log, **kw)
        tr.stage = meta["stage"]
        tr.stage_epoch = meta["stage_epoch"]
        tr.total_epochs = meta["total_epochs"]
        tr.stage_done = meta["stage_done"]
        tr.best = meta["best"]
        tr.bad_epochs = meta["bad_epochs"]
        tr.history = list(meta["history"])
        tr.opt = tr._new_optimizer(cfg.lr_stage1 if tr.stage == "stage1" else cfg.lr_stage2)
        tr.opt.load_state(ckpt.tensors, meta["adam_t"])
        best = ckpt.with_prefix("best.")
        tr.best_params = {k: v.copy() for k, v in best.items()} if best else None
        tr.shuffle_rng.set_state(meta["rng"]["shuffle"])
        tr.noise_rng.set_state(meta["rng"]["noise"])
        tr.arnet_rng.set_state(meta["rng"]["arnet"])
        return tr


def model_from_checkpoint(ckpt: Checkpoint) -> CaptionModel:
    cfg = ModelConfig(**ckpt.meta["model"])
    return CaptionModel(cfg, {k: v.copy() for k, v in ckpt.params().items()})


def train_two_stage(model: CaptionModel, train, val, cfg: TrainingConfig, log=None, on_epoch=None,
                    task=None, on_stage_end=None):
    """Stage 1 (NLL only) then stage 2 (NLL + lam * L_AR over every parameter).

    Returns ``(stage1 checkpoint, stage2 checkpoint, history)``.
    """
    tr = Trainer(model, train, val, cfg, log)
    return resume_two_stage(tr, on_epoch, task, on_stage_end)


def resume_two_stage(tr: Trainer, on_epoch=None, task=None, on_stage_end=None):
    if tr.stage == "stage1":
        tr.run_stage(on_epoch)
        ck1 = tr.checkpoint(task)
        if on_stage_end:
            on_stage_end(tr, ck1)
        tr.begin_stage2()
    else:
        ck1 = None
    tr.run_stage(on_epoch)
    ck2 = tr.checkpoint(task)
    if on_stage_end:
        on_stage_end(tr, ck2)
    return ck1, ck2, tr.history
