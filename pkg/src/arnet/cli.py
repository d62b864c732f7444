"""Command-line entry point: ``arnet <command> ...``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from . import checkpoint as ckio
from .config import DATA_ROOT_ENV, ConfigError, data_root, load, render_defaults
from .diagnostics import ZeroNormError
from .seq2seq.data import DataError
from .seq2seq.model import AttentionNormalizationError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj, path: Optional[str] = None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _emit(line: dict):
    print(json.dumps(line, sort_keys=True), flush=True)


def _config(args):
    overrides = list(args.set or [])
    for flag in ("out_dir", "seeds", "data_dir"):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{flag} = {val}")
    return load(args.config, overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    from . import datagen
    out = args.out or os.path.join(data_root(), args.kind)
    if args.kind == "mnist-subset":
        paths = datagen.export_mnist_subset(out, args.train_size, args.test_size, args.seed, args.csv)
        _dump({"kind": args.kind, "files": sorted(paths.values())})
        return EXIT_OK
    if args.size < 1:
        raise UsageError("size must be at least 1")
    try:
        fractions = [float(x) for x in args.split.split(",")]
    except ValueError:
        raise UsageError(f"--split expects three comma-separated fractions, got {args.split!r}") from None
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise UsageError("--split needs three non-negative fractions summing to 1")
    if args.kind == "copy":
        pairs = datagen.copy_corpus(args.size, args.vocab, args.max_len, args.seed, args.min_len)
    else:
        pairs = datagen.synthetic_caption_corpus(args.size, args.seed, args.min_len, args.max_len)
    files = []
    for name, part in zip(("train", "val", "test"), datagen.split_pairs(pairs, fractions)):
        files.extend(datagen.write_parallel(part, out, name))
    _dump({"kind": args.kind, "size": args.size, "seed": args.seed, "files": files})
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiment import train_seed
    cfg = _config(args)
    results = [train_seed(cfg, seed, resume=args.resume, emit=_emit) for seed in cfg.seeds]
    _dump({"task": cfg.task, "out_dir": cfg.out_dir, "runs": results})
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import sweep_lambda
    cfg = _config(args)
    grid = None
    if args.grid:
        try:
            grid = [float(x) for x in args.grid.replace(",", " ").split()]
        except ValueError:
            raise UsageError(f"--grid expects numbers, got {args.grid!r}") from None
    rows = []
    for seed in cfg.seeds:
        rows.extend(sweep_lambda(cfg, seed, grid, emit=_emit))
    _dump({"task": cfg.task, "rows": rows})
    return EXIT_OK


def _checkpoint_config(args):
    from .experiment import config_from_checkpoint
    ckpt = ckio.load(args.checkpoint)
    if args.config:
        cfg = _config(args)
    else:
        from .config import parse_text
        over, problems = parse_text("\n".join(args.set or []), "--set")
        if problems:
            raise ConfigError(problems)
        if args.data_dir is not None:
            over["data_dir"] = args.data_dir
        cfg = config_from_checkpoint(ckpt, over)
    return ckpt, cfg


def cmd_eval(args) -> int:
    from .experiment import eval_checkpoint
    ckpt, cfg = _checkpoint_config(args)
    beam = 1 if args.greedy else args.beam_size
    if beam is not None and beam < 1:
        raise UsageError("--beam-size must be at least 1")
    _dump(eval_checkpoint(ckpt, cfg, args.split, beam), args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .diagnostics import export_embeddings
    from .experiment import diagnose_checkpoint
    ckpt, cfg = _checkpoint_config(args)
    report, traces = diagnose_checkpoint(ckpt, cfg, args.split)
    if args.tsv:
        report["embeddings"] = args.tsv
        export_embeddings(traces, args.tsv)
    _dump(report, args.out)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    from .diagnostics import export_embeddings
    from .experiment import diagnose_checkpoint
    ckpt, cfg = _checkpoint_config(args)
    _, traces = diagnose_checkpoint(ckpt, cfg, args.split)
    if args.mode != "both":
        traces = [t for t in traces if t.mode == args.mode]
    n = export_embeddings(traces, args.out)
    _dump({"rows": n, "path": args.out, "mode": args.mode, "split": args.split})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SCOPES, run_scope
    scopes = args.scope or list(SCOPES)
    for s in scopes:
        if s not in SCOPES:
            raise UsageError(f"unknown scope {s!r}; choose from {', '.join(SCOPES)}")
    if args.trials < 1:
        raise UsageError("trials must be at least 1")
    if not args.tolerance > 0:
        raise UsageError("tolerance must be positive")
    reports = [run_scope(s, args.trials, args.tolerance, args.seed).to_dict() for s in scopes]
    ok = all(r["passed"] for r in reports)
    _dump({"passed": ok, "scopes": reports}, args.out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_show_config(args) -> int:
    if args.config or args.set:
        cfg = _config(args)
        for k, v in cfg.to_dict().items():
            print(f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
    else:
        sys.stdout.write(render_defaults())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _config_args(p, with_run=True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--data-dir", dest="data_dir", help=f"data directory (relative paths resolve against ${DATA_ROOT_ENV})")
    if with_run:
        p.add_argument("--out-dir", dest="out_dir", help="run directory")
        p.add_argument("--seeds", help="comma-separated seeds")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="arnet", description="LSTM encoder-decoder training with a hidden-state reconstructor.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic corpus or an MNIST subset")
    p.add_argument("--kind", required=True, choices=("copy", "synthetic-caption", "mnist-subset"))
    p.add_argument("--size", type=int, default=5000, help="number of pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default: ${DATA_ROOT_ENV}/<kind>)")
    p.add_argument("--vocab", type=int, default=20, help="copy: vocabulary size")
    p.add_argument("--min-len", dest="min_len", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,val,test fractions")
    p.add_argument("--train-size", dest="train_size", type=int, default=3000, help="mnist-subset: training digits")
    p.add_argument("--test-size", dest="test_size", type=int, default=2000, help="mnist-subset: test digits")
    p.add_argument("--csv", help="mnist-subset: CSV of 'pixels..., label' rows (default: the mlxtend sample)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-stage training, one run directory per seed")
    _config_args(p)
    p.add_argument("--resume", action="store_true", help="continue from each run's last checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-lambda", help="shared stage 1, then one stage 2 per lambda")
    _config_args(p)
    p.add_argument("--grid", help="comma-separated lambdas (default: lambda_grid from the config)")
    p.set_defaults(func=cmd_sweep)

    for name, func, helptext in (("eval", cmd_eval, "score a checkpoint on a split"),
                                 ("diagnose", cmd_diagnose, "train/inference hidden-state discrepancy"),
                                 ("export-embeddings", cmd_export_embeddings, "final hidden states as TSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        _config_args(p, with_run=False)
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        if name == "eval":
            g = p.add_mutually_exclusive_group()
            g.add_argument("--beam-size", dest="beam_size", type=int, help="beam width (default: config beam_size)")
            g.add_argument("--greedy", action="store_true", help="greedy decoding (same as --beam-size 1)")
            p.add_argument("--out", help="also write the JSON report here")
        elif name == "diagnose":
            p.add_argument("--out", help="also write the JSON report here")
            p.add_argument("--tsv", help="write both trace sets as TSV here")
        else:
            p.add_argument("--out", required=True, help="TSV path")
            p.add_argument("--mode", default="both", choices=("training", "inference", "both"))
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", action="append", help="lstm | attention | arnet | seq2seq | pmnist (repeatable; default all)")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("show-config", help="print the documented defaults, or the resolved config")
    _config_args(p)
    p.set_defaults(func=cmd_show_config)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gen-data":
        defaults = {"copy": (1, 10), "synthetic-caption": (5, 16)}.get(args.kind, (1, 1))
        args.min_len = defaults[0] if args.min_len is None else args.min_len
        args.max_len = defaults[1] if args.max_len is None else args.max_len
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"arnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AttentionNormalizationError as exc:
        print(f"arnet {args.command}: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (DataError, ZeroNormError, ckio.CheckpointError, OSError) as exc:
        print(f"arnet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining validation failures from the library (bad sizes, empty sets)
        print(f"arnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
