"""Experiment orchestration shared by the command-line tools.

Turns an :class:`ExperimentConfig` into data, models and trainers, runs
per-seed training with resumable checkpoints, and evaluates or diagnoses
saved checkpoints.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

from . import checkpoint as ckio
from .config import ConfigError, ExperimentConfig
from .diagnostics import collect_traces, discrepancy_report
from .metrics import ScoredCorpus, metrics_report
from .pmnist import (PixelDataset, PmnistModel, PmnistModelConfig, PmnistTrainer, Permutation, accuracy,
                     apply_permutation, load_mnist_idx)
from .seq2seq.data import DataError, load_parallel, make_examples
from .seq2seq.decoding import decode_corpus
from .seq2seq.model import CaptionModel, ModelConfig
from .seq2seq.training import Trainer, evaluate, model_from_checkpoint
from .seq2seq.vocab import RESERVED, Vocabulary
from .tensor import RngStream

SPLITS = ("train", "val", "test")
# experiment keys that may differ between a checkpoint and a resuming config
RUN_ONLY_KEYS = ("out_dir", "seeds", "lambda_grid", "data_dir")


@dataclass
class CaptionData:
    src_vocab: Optional[Vocabulary]
    tgt_vocab: Vocabulary
    splits: Dict[str, Optional[list]]
    g_dim: int = 0
    s_dim: int = 0


def _require(path, what):
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")


def _caption_split(cfg: ExperimentConfig, split: str, data: CaptionData):
    src_path, tgt_path = cfg.data_path(f"{split}_src"), cfg.data_path(f"{split}_tgt")
    if not src_path:
        return None
    _require(src_path, f"{split} sources")
    _require(tgt_path, f"{split} captions")
    pairs = load_parallel(src_path, tgt_path, cfg.max_src_len, cfg.max_len)
    limit = cfg.train_limit if split == "train" else cfg.test_limit if split == "test" else 0
    if limit:
        pairs = pairs[:limit]
    root = os.path.dirname(src_path) if cfg.task == "caption-feat" else None
    return make_examples(pairs, data.src_vocab, data.tgt_vocab, cfg.max_len, feature_root=root)


def prepare_caption(cfg: ExperimentConfig, vocab: Optional[dict] = None, splits=SPLITS) -> CaptionData:
    """Load caption splits; vocabularies come from ``vocab`` (checkpoint) or the training split."""
    features = cfg.task == "caption-feat"
    if vocab is None:
        _require(cfg.data_path("train_src"), "training sources")
        _require(cfg.data_path("train_tgt"), "training captions")
        pairs = load_parallel(cfg.data_path("train_src"), cfg.data_path("train_tgt"), cfg.max_src_len, cfg.max_len)
        if cfg.train_limit:
            pairs = pairs[:cfg.train_limit]
        src_vocab = None if features else Vocabulary.build([p[0] for p in pairs], cfg.min_count)
        tgt_vocab = Vocabulary.build([p[1] for p in pairs], cfg.min_count)
    else:
        src_vocab = None if vocab.get("src") is None else Vocabulary(vocab["src"])
        tgt_vocab = Vocabulary(vocab["tgt"])
    data = CaptionData(src_vocab, tgt_vocab, {})
    for split in splits:
        data.splits[split] = _caption_split(cfg, split, data)
    if data.splits.get("train") == []:
        raise DataError("training split is empty")
    first = next((ex[0] for ex in data.splits.values() if ex), None)
    if features and first is not None:
        data.g_dim, data.s_dim = first.src.g.shape[0], first.src.s.shape[1]
    return data


def prepare_pmnist(cfg: ExperimentConfig, splits=SPLITS) -> Dict[str, Optional[PixelDataset]]:
    """IDX files -> permuted datasets; ``val`` is held out from the end of the training file."""
    out: Dict[str, Optional[PixelDataset]] = {}
    perm = Permutation.from_seed(cfg.perm_seed)
    if "train" in splits or "val" in splits:
        for key in ("mnist_train_images", "mnist_train_labels"):
            _require(cfg.data_path(key), key)
        full = load_mnist_idx(cfg.data_path("mnist_train_images"), cfg.data_path("mnist_train_labels"))
        if cfg.train_limit:
            full = full.subset(range(min(cfg.train_limit, len(full))))
        if cfg.val_size >= len(full):
            raise DataError(f"val_size {cfg.val_size} leaves no training data ({len(full)} examples)")
        cut = len(full) - cfg.val_size
        out["train"] = apply_permutation(full.subset(range(cut)), perm)
        out["val"] = apply_permutation(full.subset(range(cut, len(full))), perm) if cfg.val_size else None
    if "test" in splits:
        for key in ("mnist_test_images", "mnist_test_labels"):
            _require(cfg.data_path(key), key)
        test = load_mnist_idx(cfg.data_path("mnist_test_images"), cfg.data_path("mnist_test_labels"))
        if cfg.test_limit:
            test = test.subset(range(min(cfg.test_limit, len(test))))
        out["test"] = apply_permutation(test, perm)
    return out


def prepare(cfg: ExperimentConfig, vocab=None, splits=SPLITS):
    return prepare_pmnist(cfg, splits) if cfg.kind == "pmnist" else prepare_caption(cfg, vocab, splits)


def _split(data, name):
    return data.get(name) if isinstance(data, dict) else data.splits.get(name)


def build_model(cfg: ExperimentConfig, data, seed: int):
    rng = RngStream(seed).fork("init")
    v = cfg.values
    if cfg.kind == "pmnist":
        mc = PmnistModelConfig(hidden_dim=cfg.resolved("hidden_dim"), arnet_hidden=v["arnet_hidden"],
                               init_bound=v["init_bound"], forget_bias=v["forget_bias"])
        return PmnistModel(mc, rng=rng)
    features = cfg.task == "caption-feat"
    mc = ModelConfig(source="features" if features else "tokens",
                     src_vocab=0 if features else len(data.src_vocab), tgt_vocab=len(data.tgt_vocab),
                     emb_dim=v["emb_dim"], hidden_dim=cfg.resolved("hidden_dim"), attention=v["attention"],
                     attn_dim=v["attn_dim"], g_dim=data.g_dim, s_dim=data.s_dim, init_mode=v["init_mode"],
                     arnet_hidden=v["arnet_hidden"], init_bound=v["init_bound"], forget_bias=v["forget_bias"])
    return CaptionModel(mc, rng=rng)


def run_meta(cfg: ExperimentConfig, data, seed: int) -> dict:
    # the output location is not part of the experiment, so identical runs give identical files
    meta = {"experiment": {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}, "seed": seed}
    if cfg.kind != "pmnist":
        meta["vocab"] = {"src": None if data.src_vocab is None else data.src_vocab.itos[len(RESERVED):],
                         "tgt": data.tgt_vocab.itos[len(RESERVED):]}
    return meta


def _trainer_cls(cfg: ExperimentConfig):
    return PmnistTrainer if cfg.kind == "pmnist" else Trainer


def _comparable(values: dict) -> dict:
    return {k: v for k, v in values.items() if k not in RUN_ONLY_KEYS}


def config_from_checkpoint(ckpt: ckio.Checkpoint, overrides: Optional[dict] = None) -> ExperimentConfig:
    from .config import build
    exp = ckpt.meta.get("experiment")
    if exp is None:
        raise DataError("checkpoint carries no experiment snapshot")
    raw = {k: ", ".join(map(str, v)) if isinstance(v, list) else str(v) for k, v in exp.items()}
    raw.update(overrides or {})
    return build(raw)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(cfg: ExperimentConfig, model, examples, tgt_vocab: Optional[Vocabulary] = None,
                   beam_size: Optional[int] = None) -> dict:
    """Accuracy for pMNIST; BLEU-1..4, ROUGE-L, token accuracy and NLL for captions."""
    reg = cfg.regularizer_config() if cfg.regularizer != "none" else None
    if cfg.kind == "pmnist":
        return {"accuracy": accuracy(model, examples, reg), "n": len(examples)}
    beam = cfg.beam_size if beam_size is None else beam_size
    hyps = decode_corpus(model, examples, cfg.max_len, beam, reg=reg)
    strip = (lambda ids: tgt_vocab.decode(ids)) if tgt_vocab else (lambda ids: [t for t in ids if t > 2])
    report = metrics_report(ScoredCorpus.single([strip(h) for h in hyps], [strip(e.tgt) for e in examples]))
    tf = evaluate(model, examples, cfg.training_config(0), decode=False)
    report.update({"token_acc": tf["token_acc"], "nll_per_token": tf["nll"], "beam_size": beam})
    return report


def load_checkpoint_model(ckpt: ckio.Checkpoint):
    task = ckpt.meta.get("task")
    if task == "pmnist":
        return PmnistTrainer.load_model(ckpt)
    return model_from_checkpoint(ckpt)


def check_task(ckpt: ckio.Checkpoint, cfg: ExperimentConfig):
    task = ckpt.meta.get("task")
    if task != cfg.task:
        raise DataError(f"checkpoint was trained for task {task!r} but the data is configured as {cfg.task!r}")


def eval_checkpoint(ckpt: ckio.Checkpoint, cfg: ExperimentConfig, split: str = "test",
                    beam_size: Optional[int] = None) -> dict:
    check_task(ckpt, cfg)
    data = prepare(cfg, ckpt.meta.get("vocab"), splits=(split,))
    examples = _split(data, split)
    if not examples:
        raise DataError(f"split {split!r} is empty or not configured")
    if cfg.kind == "pmnist" and ckpt.meta.get("perm_seed") != cfg.perm_seed:
        raise DataError(f"checkpoint permutation seed {ckpt.meta.get('perm_seed')} != {cfg.perm_seed}")
    model = load_checkpoint_model(ckpt)
    out = {"task": cfg.task, "split": split, "stage": ckpt.meta.get("stage")}
    out.update(evaluate_model(cfg, model, examples, None if cfg.kind == "pmnist" else data.tgt_vocab, beam_size))
    return out


def diagnose_checkpoint(ckpt: ckio.Checkpoint, cfg: ExperimentConfig, split: str = "test"):
    """Discrepancy report plus the traces (training-mode then inference-mode)."""
    check_task(ckpt, cfg)
    if cfg.kind == "pmnist":
        raise DataError("hidden-state discrepancy is defined for caption decoders only")
    data = prepare(cfg, ckpt.meta.get("vocab"), splits=(split,))
    examples = _split(data, split)
    if not examples:
        raise DataError(f"split {split!r} is empty or not configured")
    model = model_from_checkpoint(ckpt)
    reg = cfg.regularizer_config() if cfg.regularizer != "none" else None
    U = collect_traces(model, examples, "training", cfg.max_len, reg=reg)
    V = collect_traces(model, examples, "inference", cfg.max_len, reg=reg)
    report = discrepancy_report(U, V)
    report.update({"task": cfg.task, "split": split, "stage": ckpt.meta.get("stage")})
    return report, U + V


# ---------------------------------------------------------------------------
# training


def epoch_line(row: dict, seed: int, metric: str, lam: Optional[float] = None) -> dict:
    line = {"seed": seed, "epoch": row["epoch"], "stage": row["stage"], "loss": row["loss"],
            "L_AR": row["l_ar"], "val_metric": row["val_metric"], "metric": metric}
    if lam is not None:
        line["lam"] = lam
    return line


def _jsonl(path, obj):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def seed_dir(cfg: ExperimentConfig, seed: int) -> str:
    return os.path.join(cfg.out_dir, f"seed_{seed}")


def train_seed(cfg: ExperimentConfig, seed: int, resume: bool = False,
               emit: Optional[Callable[[dict], None]] = None, data=None) -> dict:
    """Two-stage training for one seed inside ``<out_dir>/seed_<seed>``.

    Writes ``history.jsonl`` (one line per epoch), ``last.ckpt`` (after every
    epoch), ``stage1.ckpt``, ``stage2.ckpt`` and ``result.json``.
    """
    run_dir = seed_dir(cfg, seed)
    os.makedirs(run_dir, exist_ok=True)
    last = os.path.join(run_dir, "last.ckpt")
    with ckio.DirectoryLock(run_dir):
        tcfg = cfg.training_config(seed)
        cls = _trainer_cls(cfg)
        if os.path.exists(last) and not resume:
            raise ConfigError([f"{run_dir} already holds a run; pass --resume or choose another out_dir"])
        if os.path.exists(last):
            ck = ckio.load(last)
            if _comparable(ck.meta.get("experiment", {})) != _comparable(cfg.to_dict()):
                raise ConfigError([f"{last} was written under a different configuration"])
            data = data or prepare(cfg, ck.meta.get("vocab"))
            tr = cls.from_checkpoint(ck, _split(data, "train"), _split(data, "val"), tcfg)
            # drop history lines written after the checkpoint being resumed
            _rewrite_history(os.path.join(run_dir, "history.jsonl"), tr.total_epochs)
        else:
            data = data or prepare(cfg)
            tr = cls(build_model(cfg, data, seed), _split(data, "train"), _split(data, "val"), tcfg)
            open(os.path.join(run_dir, "history.jsonl"), "w").close()
        tr.run_meta = run_meta(cfg, data, seed)
        metric = tcfg.early_stop_metric

        def on_epoch(t, row):
            line = epoch_line(row, seed, metric)
            _jsonl(os.path.join(run_dir, "history.jsonl"), line)
            ckio.save(t.checkpoint(cfg.task), last)
            if emit:
                emit(line)

        def on_stage_end(t, ck):
            ckio.save(ck, os.path.join(run_dir, f"{t.stage}.ckpt"))
            ckio.save(ck, last)

        from .seq2seq.training import resume_two_stage
        resume_two_stage(tr, on_epoch, cfg.task, on_stage_end)
        result = {"task": cfg.task, "seed": seed, "epochs": tr.total_epochs,
                  "best_val_metric": tr.best, "metric": metric, "test": None}
        test = _split(data, "test")
        if test:
            result["test"] = evaluate_model(cfg, tr.model, test, getattr(data, "tgt_vocab", None))
        with open(os.path.join(run_dir, "result.json"), "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
        return result


def _rewrite_history(path, epochs: int):
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and json.loads(ln)["epoch"] <= epochs]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def sweep_lambda(cfg: ExperimentConfig, seed: int, grid: Optional[List[float]] = None,
                 emit: Optional[Callable[[dict], None]] = None, data=None) -> List[dict]:
    """One shared stage 1, then a stage 2 per ``lam`` in the grid; one result row each."""
    grid = list(cfg.lambda_grid if grid is None else grid)
    run_dir = os.path.join(seed_dir(cfg, seed), "sweep")
    os.makedirs(run_dir, exist_ok=True)
    rows = []
    with ckio.DirectoryLock(run_dir):
        data = data or prepare(cfg)
        cls = _trainer_cls(cfg)
        base = cfg.training_config(seed)
        metric = base.early_stop_metric
        train, val, test = _split(data, "train"), _split(data, "val"), _split(data, "test")
        tr = cls(build_model(cfg, data, seed), train, val, base)
        tr.run_meta = run_meta(cfg, data, seed)
        tr.run_stage(lambda t, row: emit and emit(epoch_line(row, seed, metric)))
        ck1 = tr.checkpoint(cfg.task)
        ckio.save(ck1, os.path.join(run_dir, "stage1.ckpt"))
        open(os.path.join(run_dir, "sweep.jsonl"), "w").close()
        for lam in grid:
            t2 = cls.from_checkpoint(ck1, train, val, replace(base, lam=lam))
            t2.run_meta = tr.run_meta
            t2.begin_stage2()
            t2.run_stage(lambda t, row: emit and emit(epoch_line(row, seed, metric, lam)))
            ckio.save(t2.checkpoint(cfg.task), os.path.join(run_dir, f"lam_{lam:g}.ckpt"))
            evald = test or val or train
            row = {"seed": seed, "lam": lam, "split": "test" if test else "val" if val else "train",
                   "best_val_metric": t2.best, "metric": metric,
                   "scores": evaluate_model(cfg, t2.model, evald, getattr(data, "tgt_vocab", None))}
            _jsonl(os.path.join(run_dir, "sweep.jsonl"), row)
            rows.append(row)
    return rows
