"""Command-line interface.

Subcommands: generate, train, eval, sweep, confusion, export-attn, crossval.
Every command is deterministic given its flags, input files and seeds. The
CAUSALATTN_OUT environment variable, when set, is the root for relative
output paths. Exit codes: 0 success, 1 runtime/IO error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .data import Dataset, compute_bias, load_dataset, load_tudataset, save_dataset
from .dot import attention_dot
from .checkpoint import apply_checkpoint
from .harness import (confusion_by_context, crossval, run_experiment, sweep,
                      variant_config, write_record)
from .model import attention_record
from .synthetic import SynSpec, make_synthetic
from .train import TrainConfig, build_model, evaluate

_CONFIG_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def _resolve_out(path: str) -> Path:
    root = os.environ.get("CAUSALATTN_OUT")
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_any(path: str) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset not found: {p}")
    return load_tudataset(p) if p.is_dir() else load_dataset(p)


def _parse_config_file(path: Path) -> tuple[dict, str]:
    text = path.read_text(encoding="utf-8")
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path} line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values, text


def _coerce(name: str, raw: str):
    kind = _CONFIG_FIELDS.get(name)
    if kind is None:
        raise ValueError(f"unknown config key {name!r}")
    if kind in ("bool",):
        if raw.lower() in ("1", "true", "on", "yes"):
            return True
        if raw.lower() in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"config key {name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "int | None":
        return None if raw.lower() == "none" else int(raw)
    return raw


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backbone", choices=("gcn", "gin"))
    parser.add_argument("--cal", choices=("on", "off"))
    parser.add_argument("--lambda1", type=float)
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--attn-hidden", type=int)
    parser.add_argument("--shuffle", choices=("random", "ordered"))
    parser.add_argument("--k-shuffles", type=int)
    parser.add_argument("--tie-phi", action=argparse.BooleanOptionalAction)
    parser.add_argument("--sym-edges", action=argparse.BooleanOptionalAction)
    parser.add_argument("--config", help="flat key = value config file")


def _train_config(args, parser: argparse.ArgumentParser) -> tuple[TrainConfig, str]:
    file_values: dict = {}
    file_text = ""
    if args.config:
        file_values, file_text = _parse_config_file(Path(args.config))
    flag_map = {
        "backbone": args.backbone, "lambda1": args.lambda1, "lambda2": args.lambda2,
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "seed": args.seed, "hidden": args.hidden, "attn_hidden": args.attn_hidden,
        "shuffle_mode": args.shuffle, "k_shuffles": args.k_shuffles,
        "tie_phi": args.tie_phi, "sym_edges": args.sym_edges,
        "cal_enabled": None if args.cal is None else args.cal == "on",
    }
    config = TrainConfig()
    for key, raw in file_values.items():
        config = replace(config, **{key: _coerce(key, raw)})
    overrides = {k: v for k, v in flag_map.items() if v is not None}
    config = replace(config, **overrides)
    if config.epochs < 1:
        parser.error("--epochs must be >= 1")
    if config.batch_size < 1:
        parser.error("--batch-size must be >= 1")
    try:
        config.validate()
    except ValueError as exc:
        parser.error(str(exc))
    return config, file_text


def _load_run(args):
    record = json.loads(Path(args.record).read_text(encoding="utf-8"))
    config = TrainConfig(**record["config"])
    dataset = _load_any(args.data)
    model = build_model(config, dataset.feature_dim, dataset.num_classes)
    checkpoint = args.checkpoint or str(Path(args.record).with_suffix(".ckpt"))
    apply_checkpoint(model, checkpoint)
    return model, dataset


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, parser) -> int:
    if not 0.0 <= args.bias <= 1.0:
        parser.error("--bias must lie in [0, 1]")
    spec = SynSpec(bias=args.bias, n_per_class=args.n_per_class,
                   trivial_size=args.trivial_size, ba_attach=args.ba_attach,
                   perturb_frac=args.perturb_frac, feature_dim=args.feature_dim,
                   seed=args.seed)
    dataset = make_synthetic(spec)
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    trainval = dataset.subset("train") + dataset.subset("val")
    per_class = {kind: sum(1 for g in dataset.graphs if g.causal_kind == kind)
                 for kind in ("House", "Cycle", "Grid", "Diamond")}
    print(f"wrote {out} ({len(dataset.graphs)} graphs)")
    print(f"realized bias (train+val): {compute_bias(trainval):.6f}")
    print("class counts: " + " ".join(f"{k}={v}" for k, v in per_class.items()))
    return 0


def cmd_train(args, parser) -> int:
    config, file_text = _train_config(args, parser)
    dataset = _load_any(args.data)
    out_dir = _resolve_out(args.out)
    log = None
    if args.verbose:
        log = lambda entry: print(
            f"epoch {entry['epoch']:3d} loss {entry['loss_total']:.4f}"
            + (f" val_acc {entry['val_acc']:.4f}" if "val_acc" in entry else ""))
    record = run_experiment(dataset, config, out_dir, args.name,
                            config_file_text=file_text, log=log)
    print(f"wrote {out_dir / (args.name + '.json')} and {out_dir / (args.name + '.ckpt')}")
    if record["test_acc_best"] is not None:
        print(f"test accuracy (best val epoch {record['best_epoch']}):"
              f" {record['test_acc_best']:.4f}")
        print(f"test accuracy (last epoch): {record['test_acc_last']:.4f}")
    return 0


def cmd_eval(args, parser) -> int:
    model, dataset = _load_run(args)
    graphs = dataset.subset(args.split)
    result = evaluate(model, graphs, dataset.num_classes)
    print(f"{args.split} accuracy: {result.accuracy:.4f} ({len(graphs)} graphs)")
    print("confusion (rows = truth):")
    for row in result.confusion.tolist():
        print("  " + " ".join(f"{v:5d}" for v in row))
    if args.out:
        out = _resolve_out(args.out)
        write_record({"split": args.split, "accuracy": result.accuracy,
                      "confusion": result.confusion.tolist(),
                      "confusion_rownorm": result.confusion_rownorm.tolist()}, out)
        print(f"wrote {out}")
    return 0


def cmd_sweep(args, parser) -> int:
    biases = [float(b) for b in args.biases.split(",")]
    if any(not 0.0 <= b <= 1.0 for b in biases):
        parser.error("--biases must lie in [0, 1]")
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = args.variants.split(",")
    config, _ = _train_config(args, parser)
    try:
        for v in variants:
            variant_config(config, v)
    except ValueError as exc:
        parser.error(str(exc))
    spec = SynSpec(bias=0.5, n_per_class=args.n_per_class,
                   trivial_size=args.trivial_size, ba_attach=args.ba_attach,
                   perturb_frac=args.perturb_frac, feature_dim=args.feature_dim,
                   seed=args.data_seed)
    out_dir = _resolve_out(args.out)
    result = sweep(biases, seeds, variants, config, spec, out_dir, reuse=args.reuse)
    print(f"wrote {out_dir / 'sweep.json'}, accuracy.csv"
          + (", discount.csv" if result["discount"] else ""))
    for variant, cells in result["accuracy"].items():
        line = " ".join(f"b={b}:{cells[b]['median']:.4f}" for b in sorted(cells))
        print(f"{variant}: {line}")
    return 0


def cmd_confusion(args, parser) -> int:
    model, dataset = _load_run(args)
    graphs = dataset.subset(args.split)
    if not graphs:
        raise ValueError(f"split {args.split!r} is empty")
    tables = confusion_by_context(model, graphs, dataset.num_classes)
    for context, table in tables.items():
        if table["empty"]:
            print(f"{context}: no misclassifications (empty matrix)")
            continue
        print(f"{context}: {table['misclassified']} misclassified,"
              f" modal wrong prediction = class {table['modal_wrong']}")
        for row in table["rownorm"]:
            print("  " + " ".join(f"{v:.3f}" for v in row))
    if args.out:
        out = _resolve_out(args.out)
        write_record(tables, out)
        print(f"wrote {out}")
    return 0


def cmd_export_attn(args, parser) -> int:
    model, dataset = _load_run(args)
    if not 0 <= args.graph_id < len(dataset.graphs):
        raise OSError(f"graph id {args.graph_id} outside dataset"
                      f" of {len(dataset.graphs)} graphs")
    graph = dataset.graphs[args.graph_id]
    record = attention_record(model, graph, graph_id=args.graph_id)
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(attention_dot(record), encoding="utf-8")
    sidecar = out.with_suffix(".json")
    write_record(record, sidecar)
    print(f"wrote {out} and {sidecar}")
    return 0


def cmd_crossval(args, parser) -> int:
    config, _ = _train_config(args, parser)
    dataset = _load_any(args.data)
    if len(dataset.graphs) < args.folds:
        parser.error(f"--folds {args.folds} exceeds dataset size {len(dataset.graphs)}")
    log = None
    if args.verbose:
        log = lambda entry: print(f"fold {entry['fold']} test_acc {entry['test_acc']:.4f}")
    result = crossval(dataset, config, n_folds=args.folds, log=log)
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_record(result, out)
    print(f"wrote {out}")
    print(f"accuracy: {result['mean_acc']:.4f} +/- {result['std_acc']:.4f}"
          f" over {args.folds} folds")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalattn",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a biased synthetic dataset file")
    p.add_argument("--bias", type=float, required=True)
    p.add_argument("--n-per-class", type=int, default=2000)
    p.add_argument("--trivial-size", type=int, default=230)
    p.add_argument("--ba-attach", type=int, default=2)
    p.add_argument("--perturb-frac", type=float, default=0.10)
    p.add_argument("--feature-dim", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and persist the run record")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="run")
    p.add_argument("--verbose", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a dataset split")
    p.add_argument("--record", required=True, help="run record JSON from train")
    p.add_argument("--checkpoint", help="defaults to the record path with .ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="bias sweep over seeds and method variants")
    p.add_argument("--biases", default="0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default="gcn,gcn+cal")
    p.add_argument("--n-per-class", type=int, default=2000)
    p.add_argument("--trivial-size", type=int, default=230)
    p.add_argument("--ba-attach", type=int, default=2)
    p.add_argument("--perturb-frac", type=float, default=0.10)
    p.add_argument("--feature-dim", type=int, default=20)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--out", default="sweep-out")
    p.add_argument("--reuse", action="store_true",
                   help="skip cells whose run record already exists")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("confusion",
                       help="misclassification tables split by trivial context")
    p.add_argument("--record", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("export-attn", help="export attention scores as DOT + JSON")
    p.add_argument("--record", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--graph-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", default="crossval.json")
    p.add_argument("--verbose", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_crossval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
