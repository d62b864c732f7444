"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Command-line ``--set key=value`` pairs override file values.  Every
problem (unknown key, bad type, out-of-range value, inconsistent
combination) is collected and reported at once, before any compute.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from .lstm import RegularizerConfig

TASKS = ("caption-seq", "caption-feat", "pmnist", "copy-toy")
DATA_ROOT_ENV = "ARNET_DATA_ROOT"


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: str
    doc: str
    choices: Optional[tuple] = None


KEYS: List[Key] = [
    # experiment
    Key("task", str, "caption-seq", "caption-seq | caption-feat | pmnist | copy-toy", TASKS),
    Key("out_dir", str, "runs/default", "run directory; one sub-directory per seed"),
    Key("seeds", _int_list, "1", "comma-separated seeds; each seed is an independent run"),
    Key("data_dir", str, "", "base for relative data paths (default: $ARNET_DATA_ROOT, else the working directory)"),
    # caption corpora
    Key("train_src", str, "train.src", "training sources (tokens, or feature-file paths for caption-feat)"),
    Key("train_tgt", str, "train.tgt", "training captions"),
    Key("val_src", str, "val.src", "validation sources; empty disables validation"),
    Key("val_tgt", str, "val.tgt", "validation captions"),
    Key("test_src", str, "test.src", "test sources"),
    Key("test_tgt", str, "test.tgt", "test captions"),
    Key("min_count", int, "5", "vocabulary frequency cut-off"),
    Key("max_src_len", int, "300", "source truncation length"),
    # pmnist
    Key("mnist_train_images", str, "train-images-idx3-ubyte", "IDX training images"),
    Key("mnist_train_labels", str, "train-labels-idx1-ubyte", "IDX training labels"),
    Key("mnist_test_images", str, "t10k-images-idx3-ubyte", "IDX test images"),
    Key("mnist_test_labels", str, "t10k-labels-idx1-ubyte", "IDX test labels"),
    Key("perm_seed", int, "0", "seed of the fixed pixel permutation"),
    Key("val_size", int, "5000", "pmnist: examples held out of the training file for early stopping (0 = none)"),
    Key("train_limit", int, "0", "use only the first N training examples (0 = all)"),
    Key("test_limit", int, "0", "use only the first N test examples (0 = all)"),
    # model
    Key("emb_dim", int, "512", "word embedding width"),
    Key("hidden_dim", int, "0", "LSTM width (0 = task default: 512 captions, 128 pmnist)"),
    Key("attention", _bool, "false", "attentive decoder"),
    Key("attn_dim", int, "0", "attention hidden width (0 = hidden_dim)"),
    Key("init_mode", str, "state", "how the source summary enters the decoder: state | input", ("state", "input")),
    Key("arnet_hidden", int, "0", "reconstructor LSTM width (0 = hidden_dim)"),
    Key("init_bound", float, "0.08", "uniform initialization bound"),
    Key("forget_bias", float, "1.0", "initial forget-gate bias"),
    # training
    Key("lam", float, "0.01", "weight of the reconstruction loss in stage 2"),
    Key("lr_stage1", float, "0", "stage-1 learning rate (0 = task default: 5e-4 captions, 1e-3 pmnist)"),
    Key("lr_stage2", float, "0", "stage-2 learning rate (0 = task default: 1e-4 captions, 5e-4 pmnist)"),
    Key("batch_size", int, "0", "mini-batch size (0 = task default: 16 captions, 64 pmnist)"),
    Key("max_len", int, "32", "caption length cap incl. BOS/EOS, for training and decoding"),
    Key("beam_size", int, "3", "beam width for evaluation (1 = greedy)"),
    Key("scheduled_sampling", str, "off", "off | linear", ("off", "linear")),
    Key("ss_slope", float, "0.05", "per-epoch decrease of the gold-token probability"),
    Key("ss_floor", float, "0.75", "lowest gold-token probability"),
    Key("regularizer", str, "none", "none | zoneout | recurrent_dropout", ("none", "zoneout", "recurrent_dropout")),
    Key("zoneout_rate_h", float, "0.1", "zoneout keep-previous probability for h"),
    Key("zoneout_rate_c", float, "0.1", "zoneout keep-previous probability for c"),
    Key("dropout_rate", float, "0.1", "recurrent dropout rate on the candidate update"),
    Key("early_stop_patience", int, "10", "epochs without validation improvement before stopping"),
    Key("early_stop_metric", str, "bleu4", "bleu4 | token_acc | exact | nll (pmnist always uses accuracy)",
        ("bleu4", "token_acc", "exact", "nll", "accuracy")),
    Key("epochs_stage1", int, "30", "stage-1 epoch budget"),
    Key("epochs_stage2", int, "20", "stage-2 epoch budget"),
    Key("adam_beta1", float, "0.9", "Adam beta1"),
    Key("adam_beta2", float, "0.999", "Adam beta2"),
    Key("adam_eps", float, "1e-8", "Adam epsilon"),
    Key("clip_norm", float, "5.0", "global gradient-norm clip"),
    Key("arnet", str, "attached", "stage-2 reconstructor: attached | detached | off", ("attached", "detached", "off")),
    Key("check_attention", _bool, "false", "assert every attention vector sums to 1 during training"),
    Key("lambda_grid", _float_list, "0, 0.001, 0.005, 0.01, 0.05, 0.1", "values tried by sweep-lambda"),
]
KEY_INDEX = {k.name: k for k in KEYS}

TASK_DEFAULTS = {
    "pmnist": {"hidden_dim": 128, "lr_stage1": 1e-3, "lr_stage2": 5e-4, "batch_size": 64},
    "caption": {"hidden_dim": 512, "lr_stage1": 5e-4, "lr_stage2": 1e-4, "batch_size": 16},
}


def parse_text(text: str, origin: str = "<config>"):
    """``key = value`` lines into a dict of raw strings, plus parse problems."""
    raw, problems = {}, []
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(f"{origin}:{n}: expected 'key = value', got {line.strip()!r}")
            continue
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            problems.append(f"{origin}:{n}: missing key")
            continue
        raw[key] = value
    return raw, problems


def data_root(data_dir: str = "") -> str:
    """``data_dir`` resolved against ``$ARNET_DATA_ROOT`` (relative dirs) or the working directory."""
    env = os.environ.get(DATA_ROOT_ENV, "")
    if os.path.isabs(data_dir):
        return data_dir
    return os.path.join(env, data_dir) if env else (data_dir or ".")


class ExperimentConfig:
    """Typed, validated view of a flat config."""

    def __init__(self, values: Dict[str, Any]):
        self.values = values

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def kind(self) -> str:
        return "pmnist" if self.values["task"] == "pmnist" else "caption"

    def resolved(self, key: str):
        """Value with the ``0 = task default`` convention applied."""
        v = self.values[key]
        if key in TASK_DEFAULTS[self.kind] and v == 0:
            return TASK_DEFAULTS[self.kind][key]
        return v

    def data_path(self, key: str) -> str:
        p = self.values[key]
        if not p or os.path.isabs(p):
            return p
        return os.path.join(data_root(self.values["data_dir"]), p)

    def regularizer_config(self) -> RegularizerConfig:
        v = self.values
        return RegularizerConfig(v["regularizer"], v["zoneout_rate_h"], v["zoneout_rate_c"], v["dropout_rate"])

    def training_config(self, seed: int):
        v = self.values
        common = dict(lam=v["lam"], lr_stage1=self.resolved("lr_stage1"), lr_stage2=self.resolved("lr_stage2"),
                      batch_size=self.resolved("batch_size"), regularizer=self.regularizer_config(),
                      early_stop_patience=v["early_stop_patience"], epochs_stage1=v["epochs_stage1"],
                      epochs_stage2=v["epochs_stage2"], seed=seed, adam_beta1=v["adam_beta1"],
                      adam_beta2=v["adam_beta2"], adam_eps=v["adam_eps"], clip_norm=v["clip_norm"],
                      arnet=v["arnet"])
        if self.kind == "pmnist":
            from .pmnist import PmnistConfig
            return PmnistConfig(**common, early_stop_metric="accuracy", perm_seed=v["perm_seed"])
        from .seq2seq.training import TrainingConfig
        return TrainingConfig(**common, max_len=v["max_len"], beam_size=v["beam_size"],
                              scheduled_sampling=v["scheduled_sampling"], ss_slope=v["ss_slope"],
                              ss_floor=v["ss_floor"], early_stop_metric=v["early_stop_metric"],
                              check_attention=v["check_attention"])

    def to_dict(self) -> dict:
        return dict(self.values)


def _semantic_problems(values: Dict[str, Any]) -> List[str]:
    errs = []
    positive = ("emb_dim", "max_len", "beam_size", "min_count", "max_src_len")
    for k in positive:
        if values[k] < 1:
            errs.append(f"{k} must be >= 1")
    for k in ("hidden_dim", "attn_dim", "arnet_hidden", "batch_size", "train_limit", "test_limit", "val_size",
              "epochs_stage1", "epochs_stage2", "early_stop_patience"):
        if values[k] < 0:
            errs.append(f"{k} must be >= 0")
    for k in ("lr_stage1", "lr_stage2", "clip_norm", "adam_eps"):
        if values[k] < 0:
            errs.append(f"{k} must be >= 0")
    if values["lam"] < 0:
        errs.append("lam must be >= 0")
    if values["init_bound"] <= 0:
        errs.append("init_bound must be > 0")
    for k in ("zoneout_rate_h", "zoneout_rate_c", "ss_slope", "ss_floor", "adam_beta1", "adam_beta2"):
        if not 0.0 <= values[k] <= 1.0:
            errs.append(f"{k} must lie in [0, 1]")
    if not 0.0 <= values["dropout_rate"] < 1.0:
        errs.append("dropout_rate must lie in [0, 1)")
    if not values["seeds"]:
        errs.append("seeds must list at least one seed")
    elif len(set(values["seeds"])) != len(values["seeds"]):
        errs.append("seeds must be distinct")
    elif any(s < 0 for s in values["seeds"]):
        errs.append("seeds must be non-negative")
    if any(x < 0 for x in values["lambda_grid"]) or not values["lambda_grid"]:
        errs.append("lambda_grid must be a non-empty list of non-negative values")
    if values["task"] == "pmnist":
        if values["early_stop_metric"] not in ("bleu4", "accuracy"):
            errs.append("pmnist early stopping always uses accuracy; leave early_stop_metric unset")
        if values["attention"]:
            errs.append("attention is not available for pmnist")
    elif values["early_stop_metric"] == "accuracy":
        errs.append("early_stop_metric accuracy only applies to pmnist")
    return errs


def build(raw: Dict[str, str], origin_problems: Sequence[str] = ()) -> ExperimentConfig:
    problems = list(origin_problems)
    values = {}
    for key in raw:
        if key not in KEY_INDEX:
            problems.append(f"unknown key {key!r}")
    for spec in KEYS:
        text = raw.get(spec.name, spec.default)
        try:
            val = spec.parse(text)
        except ValueError as exc:
            problems.append(f"{spec.name}: cannot parse {text!r} ({exc})")
            val = spec.parse(spec.default)
        if spec.choices and val not in spec.choices:
            problems.append(f"{spec.name}: {val!r} is not one of {', '.join(spec.choices)}")
        values[spec.name] = val
    problems.extend(_semantic_problems(values))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(values)


def load(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw, problems = {}, []
    if path:
        with open(path, encoding="utf-8") as fh:
            raw, problems = parse_text(fh.read(), path)
    over, over_problems = parse_text("\n".join(overrides), "--set")
    raw.update(over)
    return build(raw, problems + over_problems)


def render_defaults() -> str:
    """A fully documented config file holding every default."""
    lines = []
    for k in KEYS:
        lines.append(f"# {k.doc}")
        lines.append(f"{k.name} = {k.default}")
    return "\n".join(lines) + "\n"
