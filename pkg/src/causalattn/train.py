"""Training objective and loop: supervised loss on the causal branch, uniform
KL loss on the trivial branch, intervention loss over within-batch random
combinations, and best-validation-epoch model selection."""

from __future__ import annotations

import gc
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .data import Dataset, Graph
from .layers import BACKBONES
from .model import (CalModel, causal_forward, graph_masks, intervene_predict,
                    predict, trivial_forward, vanilla_logits)
from .optim import Adam

SHUFFLE_MODES = ("random", "ordered")


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    backbone: str = "gcn"
    cal_enabled: bool = True
    shuffle_mode: str = "random"   # "ordered" = plain addition ablation
    hidden: int = 128
    attn_hidden: int | None = None
    k_shuffles: int = 1
    tie_phi: bool = False
    sym_edges: bool = False

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss coefficients must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.k_shuffles < 1:
            raise ValueError("epochs, batch_size and k_shuffles must be >= 1")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.shuffle_mode not in SHUFFLE_MODES:
            raise ValueError(f"unknown shuffle mode {self.shuffle_mode!r}")


@dataclass
class LossBreakdown:
    sup: float
    unif: float
    caus: float
    total: float

    def as_dict(self) -> dict:
        return {"loss_sup": self.sup, "loss_unif": self.unif,
                "loss_caus": self.caus, "loss_total": self.total}


def build_model(config: TrainConfig, feature_dim: int, num_classes: int) -> CalModel:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    return CalModel.init(rng, config.backbone, feature_dim, config.hidden,
                         num_classes, attn_hidden=config.attn_hidden,
                         cal_enabled=config.cal_enabled, tie_phi=config.tie_phi,
                         sym_edges=config.sym_edges)


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")


def loss_sup(z: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row-softmaxed logits against integer labels."""
    m, k = z.values.shape
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, k)
    onehot = np.zeros((m, k))
    onehot[np.arange(m), labels] = 1.0
    logp = ad.log_eps(ad.softmax_rows(z))
    picked = ad.rowsum(ad.mul(logp, Tensor(onehot)))
    return ad.scale(ad.tmean(picked), -1.0)


def loss_unif(z: Tensor) -> Tensor:
    """Mean KL(uniform || softmax(z)): pushes logits toward a flat prediction."""
    k = z.values.shape[1]
    logp = ad.log_eps(ad.softmax_rows(z))
    per_row = ad.shift(ad.scale(ad.rowsum(logp), -1.0 / k), math.log(1.0 / k))
    return ad.tmean(per_row)


def loss_caus(z_prime: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy of intervened predictions against the causal graph's label."""
    return loss_sup(z_prime, labels)


def _cal_batch_loss(model: CalModel, batch: list[Graph], config: TrainConfig,
                    rng_intervene: np.random.Generator) -> tuple[Tensor, LossBreakdown]:
    labels = np.asarray([g.y for g in batch], dtype=np.int64)
    z_c_parts, z_t_parts, h_c_parts, h_t_parts = [], [], [], []
    for graph in batch:
        _, masks = graph_masks(model, graph)
        h_c, z_c = causal_forward(model, graph, masks)
        h_t, z_t = trivial_forward(model, graph, masks)
        z_c_parts.append(z_c)
        z_t_parts.append(z_t)
        h_c_parts.append(h_c)
        h_t_parts.append(h_t)
    z_c_all = ad.concat(z_c_parts, axis=0)
    z_t_all = ad.concat(z_t_parts, axis=0)
    h_c_all = ad.concat(h_c_parts, axis=0)
    h_t_all = ad.concat(h_t_parts, axis=0)

    l_sup = loss_sup(z_c_all, labels)
    l_unif = loss_unif(z_t_all)

    m = len(batch)
    caus_terms = []
    for _ in range(config.k_shuffles):
        if config.shuffle_mode == "random":
            order = rng_intervene.permutation(m)
        else:
            order = np.arange(m)
        z_prime = intervene_predict(model, h_c_all, ad.gather_rows(h_t_all, order))
        caus_terms.append(loss_caus(z_prime, labels))
    l_caus = caus_terms[0]
    for term in caus_terms[1:]:
        l_caus = ad.add(l_caus, term)
    if config.k_shuffles > 1:
        l_caus = ad.scale(l_caus, 1.0 / config.k_shuffles)

    total = ad.add(ad.add(l_sup, ad.scale(l_unif, config.lambda1)),
                   ad.scale(l_caus, config.lambda2))
    breakdown = LossBreakdown(sup=l_sup.item(), unif=l_unif.item(),
                              caus=l_caus.item(), total=total.item())
    return total, breakdown


def _vanilla_batch_loss(model: CalModel, batch: list[Graph]) -> tuple[Tensor, LossBreakdown]:
    labels = np.asarray([g.y for g in batch], dtype=np.int64)
    z_all = ad.concat([vanilla_logits(model, g) for g in batch], axis=0)
    l_sup = loss_sup(z_all, labels)
    return l_sup, LossBreakdown(sup=l_sup.item(), unif=0.0, caus=0.0, total=l_sup.item())


def train_epoch(model: CalModel, graphs: list[Graph], config: TrainConfig,
                opt: Adam, rng_batch: np.random.Generator,
                rng_intervene: np.random.Generator) -> tuple[list[LossBreakdown], LossBreakdown]:
    """One pass over the training graphs; one Adam step per batch.

    Returns per-batch loss breakdowns and their graph-weighted epoch mean.
    """
    if not graphs:
        raise ValueError("training split is empty")
    order = rng_batch.permutation(len(graphs))
    per_batch = []
    sums = np.zeros(4)
    # the op graph is acyclic (reference counting frees it), so pause the
    # cycle collector instead of letting it rescan every batch's tape
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for lo in range(0, len(order), config.batch_size):
            batch = [graphs[i] for i in order[lo:lo + config.batch_size]]
            with Tape() as tape:
                if model.cal_enabled:
                    total, breakdown = _cal_batch_loss(model, batch, config, rng_intervene)
                else:
                    total, breakdown = _vanilla_batch_loss(model, batch)
                backward(tape, total, retain=False)
            opt.step()
            per_batch.append(breakdown)
            sums += np.array([breakdown.sup, breakdown.unif, breakdown.caus,
                              breakdown.total]) * len(batch)
    finally:
        if gc_was_enabled:
            gc.enable()
    mean = sums / len(graphs)
    return per_batch, LossBreakdown(*mean)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray          # rows = ground truth, columns = prediction

    @property
    def confusion_rownorm(self) -> np.ndarray:
        counts = self.confusion.astype(np.float64)
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def evaluate(model: CalModel, graphs: list[Graph], num_classes: int) -> EvalResult:
    if not graphs:
        raise ValueError("cannot evaluate an empty split")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    hits = 0
    for g in graphs:
        pred = predict(model, g)
        confusion[g.y, pred] += 1
        hits += pred == g.y
    return EvalResult(accuracy=hits / len(graphs), confusion=confusion)


@dataclass
class FitResult:
    model: CalModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    val_acc_best: float | None = None
    test_acc_best: float | None = None
    test_acc_last: float | None = None
    test_eval_best: EvalResult | None = None


def fit(model: CalModel, dataset: Dataset, config: TrainConfig,
        log=None) -> FitResult:
    """Train on the train split, select by best validation accuracy, and
    evaluate the selected and last-epoch models on the test split."""
    config.validate()
    train = dataset.subset("train")
    val = dataset.subset("val")
    test = dataset.subset("test")
    if not train:
        raise ValueError("training split is empty")

    params = model.trainable_parameters()
    opt = Adam(params, lr=config.lr)
    rng_batch = np.random.default_rng([config.seed, 1])
    rng_intervene = np.random.default_rng([config.seed, 2])

    result = FitResult(model=model)
    best_acc = -1.0
    best_snapshot = None
    all_params = model.named_parameters()
    for epoch in range(1, config.epochs + 1):
        _, mean = train_epoch(model, train, config, opt, rng_batch, rng_intervene)
        entry = {"epoch": epoch, **mean.as_dict()}
        if val:
            val_acc = evaluate(model, val, dataset.num_classes).accuracy
            entry["val_acc"] = val_acc
            if val_acc > best_acc:
                best_acc = val_acc
                result.best_epoch = epoch
                best_snapshot = {k: t.values.copy() for k, t in all_params.items()}
        result.history.append(entry)
        if log is not None:
            log(entry)

    if not val:
        result.best_epoch = config.epochs
    else:
        result.val_acc_best = best_acc

    if test:
        result.test_acc_last = evaluate(model, test, dataset.num_classes).accuracy
        if best_snapshot is not None:
            for k, t in all_params.items():
                t.values[...] = best_snapshot[k]
        result.test_eval_best = evaluate(model, test, dataset.num_classes)
        result.test_acc_best = result.test_eval_best.accuracy
    return result
