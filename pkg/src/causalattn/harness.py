"""Experiment orchestration: single runs with persisted records, bias sweeps
with performance-discount tables, misclassification analysis split by
trivial-subgraph context, and stratified k-fold cross-validation."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, Graph, compute_bias, load_dataset, save_dataset
from .model import CalModel, predict
from .synthetic import SynSpec, make_synthetic
from .train import TrainConfig, build_model, evaluate, fit

UNBIASED = 0.5


def dataset_summary(dataset: Dataset) -> dict:
    counts = {split: len(dataset.subset(split)) for split in ("train", "val", "test")}
    summary = {"graphs": len(dataset.graphs), "num_classes": dataset.num_classes,
               "feature_dim": dataset.feature_dim, "split_counts": counts}
    trainval = dataset.subset("train") + dataset.subset("val")
    if any(g.causal_kind == "House" for g in trainval):
        summary["bias_trainval"] = compute_bias(trainval)
    return summary


def run_experiment(dataset: Dataset, config: TrainConfig, out_dir, name: str,
                   config_file_text: str = "", log=None, reuse: bool = False) -> dict:
    """Train one model, persist its RunRecord and checkpoint, return the record.

    With ``reuse=True`` an existing record for the same name and config is
    returned instead of retraining (runs are deterministic in their config).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = out_dir / f"{name}.json"
    if reuse and record_path.exists():
        record = json.loads(record_path.read_text(encoding="utf-8"))
        if record.get("config") == asdict(config):
            return record
    model = build_model(config, dataset.feature_dim, dataset.num_classes)
    started = time.perf_counter()
    result = fit(model, dataset, config, log=log)
    wall = time.perf_counter() - started

    record = {
        "run": name,
        "config": asdict(config),
        "config_file": config_file_text,
        "dataset": dataset_summary(dataset),
        "epochs": result.history,
        "best_epoch": result.best_epoch,
        "val_acc_best": result.val_acc_best,
        "test_acc_best": result.test_acc_best,
        "test_acc_last": result.test_acc_last,
        "confusion_best": (result.test_eval_best.confusion.tolist()
                           if result.test_eval_best else None),
        "confusion_best_rownorm": (result.test_eval_best.confusion_rownorm.tolist()
                                   if result.test_eval_best else None),
        "wall_clock_sec": wall,
    }
    write_record(record, out_dir / f"{name}.json")
    save_checkpoint(model.named_parameters(), out_dir / f"{name}.ckpt")
    return record


def write_record(record: dict, path) -> None:
    Path(path).write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")


def canonical_record_bytes(path) -> bytes:
    """Record bytes with the wall clock normalized, for determinism checks."""
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    record["wall_clock_sec"] = 0.0
    return json.dumps(record, indent=1).encode("utf-8")


# ---------------------------------------------------------------------------
# bias sweep


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    """Parse "<backbone>[+cal][+ordered]" into a concrete TrainConfig."""
    parts = variant.split("+")
    backbone = parts[0]
    flags = set(parts[1:])
    unknown = flags - {"cal", "ordered"}
    if backbone not in ("gcn", "gin") or unknown:
        raise ValueError(f"unknown variant {variant!r}")
    return replace(base, backbone=backbone,
                   cal_enabled="cal" in flags or "ordered" in flags,
                   shuffle_mode="ordered" if "ordered" in flags else "random")


def ensure_synthetic(spec: SynSpec, data_dir) -> Dataset:
    """Generate-or-load the dataset for one bias level, cached on disk."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    tag = f"syn-b{spec.bias:g}-n{spec.n_per_class}-t{spec.trivial_size}-s{spec.seed}"
    path = data_dir / f"{tag}.txt"
    if not path.exists():
        save_dataset(make_synthetic(spec), path)
    return load_dataset(path)


def sweep(biases, seeds, variants, base_config: TrainConfig, base_spec: SynSpec,
          out_dir, log=None, reuse: bool = False) -> dict:
    """Train every (bias, seed, variant) cell; report per-cell accuracy,
    per-variant medians, and the performance discount against the unbiased
    dataset when it is part of the sweep."""
    out_dir = Path(out_dir)
    accuracy: dict[str, dict[str, dict]] = {}
    for bias in biases:
        dataset = ensure_synthetic(replace(base_spec, bias=bias), out_dir / "data")
        for variant in variants:
            for seed in seeds:
                config = replace(variant_config(base_config, variant), seed=seed)
                name = f"{variant.replace('+', '-')}-b{bias:g}-s{seed}"
                record = run_experiment(dataset, config, out_dir / "runs", name,
                                        log=log, reuse=reuse)
                cell = accuracy.setdefault(variant, {}).setdefault(
                    f"{bias:g}", {"per_seed": {}, "median": None})
                cell["per_seed"][str(seed)] = record["test_acc_best"]
    for variant in accuracy:
        for bias_key, cell in accuracy[variant].items():
            cell["median"] = statistics.median(cell["per_seed"].values())

    discount = {}
    unbiased_key = f"{UNBIASED:g}"
    for variant, cells in accuracy.items():
        if unbiased_key in cells and cells[unbiased_key]["median"]:
            base_acc = cells[unbiased_key]["median"]
            discount[variant] = {bk: cell["median"] / base_acc
                                 for bk, cell in cells.items()}

    result = {
        "biases": [f"{b:g}" for b in biases],
        "seeds": list(seeds),
        "variants": list(variants),
        "accuracy": accuracy,
        "discount": discount,
    }
    write_record(result, out_dir / "sweep.json")
    _write_table(out_dir / "accuracy.csv", accuracy, "median", biases)
    if discount:
        _write_table(out_dir / "discount.csv", discount, None, biases)
    return result


def _write_table(path, per_variant: dict, key, biases) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant"] + [f"{b:g}" for b in biases])
        for variant, cells in per_variant.items():
            row = [variant]
            for b in biases:
                cell = cells.get(f"{b:g}")
                value = cell if key is None else (cell or {}).get(key)
                row.append("" if value is None else repr(value))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# misclassification analysis


def confusion_by_context(model: CalModel, graphs: list[Graph], num_classes: int) -> dict:
    """Row-normalized misclassification tables split by trivial-subgraph kind.

    Rows are ground truth, columns predictions; only wrong predictions are
    counted. Contexts with no misclassification carry the empty-matrix marker.
    """
    out = {}
    for context in ("BA", "Tree"):
        members = [g for g in graphs if g.trivial_kind == context]
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        for g in members:
            pred = predict(model, g)
            if pred != g.y:
                counts[g.y, pred] += 1
        total = int(counts.sum())
        rowsums = counts.sum(axis=1, keepdims=True).astype(np.float64)
        rownorm = np.divide(counts, rowsums, out=np.zeros(counts.shape), where=rowsums > 0)
        out[context] = {
            "graphs": len(members),
            "misclassified": total,
            "empty": total == 0,
            "counts": counts.tolist(),
            "rownorm": rownorm.tolist(),
            "modal_wrong": int(counts.sum(axis=0).argmax()) if total else None,
        }
    return out


def modal_misprediction(counts, exclude_true: int | None = None) -> int | None:
    """Most common predicted class among the counted misclassifications,
    optionally ignoring rows with the given true class."""
    counts = np.asarray(counts)
    if exclude_true is not None:
        counts = np.delete(counts, exclude_true, axis=0)
    if counts.sum() == 0:
        return None
    return int(counts.sum(axis=0).argmax())


# ---------------------------------------------------------------------------
# cross-validation


def stratified_folds(labels: np.ndarray, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per graph; each class is dealt round-robin after a shuffle."""
    labels = np.asarray(labels)
    if len(labels) < n_folds:
        raise ValueError(f"cannot split {len(labels)} graphs into {n_folds} folds")
    fold = np.zeros(len(labels), dtype=np.int64)
    offset = 0
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        members = members[rng.permutation(len(members))]
        fold[members] = (np.arange(len(members)) + offset) % n_folds
        offset += len(members)  # stagger so small classes spread evenly
    return fold


def crossval(dataset: Dataset, config: TrainConfig, n_folds: int = 10,
             val_fraction: float = 0.1, log=None) -> dict:
    """Stratified k-fold cross-validation with a per-fold validation carve-out
    (used for best-epoch selection); reports mean and std test accuracy."""
    labels = np.asarray([g.y for g in dataset.graphs])
    rng = np.random.default_rng([config.seed, 3])
    fold = stratified_folds(labels, n_folds, rng)
    accs = []
    for f in range(n_folds):
        train_ids = np.flatnonzero(fold != f)
        rng_val = np.random.default_rng([config.seed, 4, f])
        val_ids = set()
        for label in np.unique(labels):
            members = train_ids[labels[train_ids] == label]
            members = members[rng_val.permutation(len(members))]
            val_ids.update(members[:round(val_fraction * len(members))].tolist())
        for i, g in enumerate(dataset.graphs):
            if fold[i] == f:
                g.split = "test"
            elif i in val_ids:
                g.split = "val"
            else:
                g.split = "train"
        model = build_model(config, dataset.feature_dim, dataset.num_classes)
        result = fit(model, dataset, config)
        accs.append(result.test_acc_best)
        if log is not None:
            log({"fold": f, "test_acc": result.test_acc_best})
    return {
        "folds": n_folds,
        "fold_sizes": [int((fold == f).sum()) for f in range(n_folds)],
        "per_fold_acc": accs,
        "mean_acc": float(np.mean(accs)),
        "std_acc": float(np.std(accs)),
        "config": asdict(config),
    }
