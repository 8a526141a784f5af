"""Training pipeline: loss, metrics, splits, loop, and random search.

Everything is seeded through numpy Generators, so two runs with the
same seed produce identical parameter trajectories and curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tensor
from .cohort import ChannelStats, SampleRecord, fit_normalizer, normalize_samples
from .errors import ConfigError, ContractError, NumericError
from .model import ModelConfig, VampNet
from .optim import make_optimizer
from .tokens import (
    STATIC,
    SUBWORD,
    PaddedBatch,
    Vocabulary,
    build_static_vocab,
    collate,
    length_percentile,
    shuffle_augment,
    train_subword,
)

# -- loss ------------------------------------------------------------------


def class_weights_from_counts(n_class0: int, n_class1: int) -> np.ndarray:
    """Inverse-frequency weights: w_c = total / (2 * count_c)."""
    if n_class0 <= 0 or n_class1 <= 0:
        raise ConfigError(f"both classes need samples, got counts ({n_class0}, {n_class1})")
    total = n_class0 + n_class1
    return np.array([total / (2.0 * n_class0), total / (2.0 * n_class1)])


def weighted_ce(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean over the batch of w_label * (-log softmax(logits)[label])."""
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (2,):
        raise ContractError(f"expected one weight per class, got shape {weights.shape}")
    if (weights <= 0).any():
        raise ConfigError(f"class weights must be positive, got {weights.tolist()}")
    if logits.ndim != 2 or logits.shape[0] != len(labels) or logits.shape[1] != 2:
        raise ContractError(f"logits {logits.shape} do not match {len(labels)} binary labels")
    logp = ad.log_softmax(logits)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = ad.sum_over_axis(ad.mul(logp, ad.constant(onehot)), 1)
    weighted = ad.mul(picked, ad.constant(weights[labels]))
    return ad.mul(ad.mean_all(weighted), -1.0)


# -- metrics ---------------------------------------------------------------------


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None  # None when the split is single-class


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUC; tied scores contribute half weight."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average rank on ties = half credit per tied pair
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} differ")
    preds = scores >= 0.5
    pos, neg = labels == 1, labels == 0
    tp = int((preds & pos).sum())
    tn = int((~preds & neg).sum())
    fp = int((preds & neg).sum())
    fn = int((~preds & pos).sum())
    n = len(labels)
    accuracy = (tp + tn) / n if n else 0.0
    recalls = []
    if pos.any():
        recalls.append(tp / (tp + fn))
    if neg.any():
        recalls.append(tn / (tn + fp))
    balanced = float(np.mean(recalls)) if recalls else 0.0
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return MetricsReport(
        n=n,
        accuracy=accuracy,
        balanced_accuracy=balanced,
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc_score(scores, labels),
    )


def write_metrics_csv(path: str | Path, reports: dict[str, MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "n", "accuracy", "balanced_accuracy", "precision", "recall", "f1", "auc"])
        for split, r in reports.items():
            auc = "NA" if r.auc is None else repr(r.auc)
            writer.writerow([split, r.n, repr(r.accuracy), repr(r.balanced_accuracy), repr(r.precision), repr(r.recall), repr(r.f1), auc])


# -- splits ------------------------------------------------------------------------


def split_cohort(
    samples: Sequence[SampleRecord],
    seed: int,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    stratified: bool = True,
) -> tuple[list[SampleRecord], list[SampleRecord], list[SampleRecord]]:
    """Deterministic train/val/test split, stratified by label by default."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    idx = np.arange(len(samples))
    groups = [idx[[s.label == c for s in samples]] for c in (0, 1)] if stratified else [idx]
    parts: list[list[int]] = [[], [], []]
    for group in groups:
        group = rng.permutation(group)
        n = len(group)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_train)
        parts[0].extend(group[:n_train])
        parts[1].extend(group[n_train : n_train + n_val])
        parts[2].extend(group[n_train + n_val :])
    out = []
    for part in parts:
        part.sort()  # keep original cohort order inside each split
        out.append([samples[i] for i in part])
    return out[0], out[1], out[2]


# -- training loop --------------------------------------------------------------------


@dataclass
class TrainConfig:
    seed: int
    max_epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    optimizer: str = "adam"
    momentum: float = 0.9
    patience: int = 10
    augment: bool = False
    l_max_percentile: float = 99.0
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    subword_target: int = 200
    stratified: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if len(self.fractions) != 3 or min(self.fractions) < 0.0:
            raise ConfigError("fractions must be three nonnegative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"fractions must sum to 1, got {sum(self.fractions)}")
        if not (0.0 < self.l_max_percentile <= 100.0):
            raise ConfigError(f"l_max_percentile must lie in (0, 100], got {self.l_max_percentile}")


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    auc: float | None


@dataclass
class TrainResult:
    model: VampNet
    vocab: Vocabulary
    stats: ChannelStats
    l_max: int
    curves: list[EpochRow]
    best_epoch: int
    n_truncated: int
    class_weights: np.ndarray
    metrics: dict[str, MetricsReport]
    splits: tuple[list[SampleRecord], list[SampleRecord], list[SampleRecord]]


def write_curves_csv(path: str | Path, curves: list[EpochRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy", "auc"])
        for row in curves:
            auc = "NA" if row.auc is None else repr(row.auc)
            writer.writerow([row.epoch, row.split, repr(row.loss), repr(row.accuracy), auc])


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _softmax_scores(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=-1)


def _eval_split(
    model: VampNet,
    samples: Sequence[SampleRecord],
    vocab: Vocabulary,
    l_max: int,
    weights: np.ndarray,
    batch_size: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    losses, sizes, scores, labels = [], [], [], []
    for chunk in _batches(len(samples), batch_size):
        batch = collate([samples[i] for i in chunk], vocab, l_max)
        logits, _ = model.forward(batch, train=False)
        losses.append(weighted_ce(logits, batch.labels, weights).data.item())
        sizes.append(batch.n_samples)
        scores.append(_softmax_scores(logits.data))
        labels.append(batch.labels)
    loss = float(np.average(losses, weights=sizes))
    return loss, np.concatenate(scores), np.concatenate(labels)


def train_model(
    samples: Sequence[SampleRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    verbose: bool = False,
) -> TrainResult:
    """Split, normalize, fit; returns the best-validation-epoch model."""
    train_raw, val_raw, test_raw = split_cohort(samples, cfg.seed, cfg.fractions, cfg.stratified)
    if not train_raw or not val_raw:
        raise ConfigError("train and validation splits must be non-empty")
    stats = fit_normalizer(train_raw)
    train_s = normalize_samples(stats, train_raw)
    val_s = normalize_samples(stats, val_raw)
    test_s = normalize_samples(stats, test_raw)

    if model_cfg.encoding == STATIC:
        vocab = build_static_vocab(train_s)
    else:
        vocab = train_subword([t for s in train_s for t in s.tokens], cfg.subword_target)
    l_max = length_percentile(train_s, cfg.l_max_percentile)
    model_cfg = replace(model_cfg, vocab_size=vocab.size)
    model = VampNet(model_cfg, seed=cfg.seed)

    n1 = sum(s.label for s in train_s)
    weights = class_weights_from_counts(len(train_s) - n1, n1)
    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.momentum)

    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, dropout_rng, augment_rng = (np.random.default_rng(c) for c in ss.spawn(3))

    curves: list[EpochRow] = []
    best_score = -np.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {}
    stall = 0
    n_truncated = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_s))
        ep_losses, ep_sizes, ep_scores, ep_labels = [], [], [], []
        for chunk in _batches(len(train_s), cfg.batch_size, order):
            recs = [train_s[i] for i in chunk]
            if cfg.augment:
                recs = [shuffle_augment(r, augment_rng) for r in recs]
            batch = collate(recs, vocab, l_max)
            if epoch == 1:
                n_truncated += batch.n_truncated
            logits, _ = model.forward(batch, train=True, rng=dropout_rng)
            loss = weighted_ce(logits, batch.labels, weights)
            if not np.isfinite(loss.data):
                raise NumericError(f"training loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            model.zero_pad_grad()
            opt.step()
            ep_losses.append(loss.data.item())
            ep_sizes.append(batch.n_samples)
            ep_scores.append(_softmax_scores(logits.data))
            ep_labels.append(batch.labels)
        train_scores = np.concatenate(ep_scores)
        train_labels = np.concatenate(ep_labels)
        train_loss = float(np.average(ep_losses, weights=ep_sizes))
        curves.append(
            EpochRow(epoch, "train", train_loss, evaluate(train_scores, train_labels).accuracy, auc_score(train_scores, train_labels))
        )
        val_loss, val_scores, val_labels = _eval_split(model, val_s, vocab, l_max, weights, cfg.batch_size)
        val_report = evaluate(val_scores, val_labels)
        curves.append(EpochRow(epoch, "val", val_loss, val_report.accuracy, val_report.auc))
        if verbose:
            print(f"epoch {epoch}: train loss {train_loss:.4f}, val loss {val_loss:.4f}, val auc {val_report.auc}")
        # early stopping tracks validation AUC (accuracy if AUC is undefined)
        score = val_report.auc if val_report.auc is not None else val_report.accuracy
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    for name, p in params.items():
        p.data[:] = best_params[name]

    metrics: dict[str, MetricsReport] = {}
    for split, data in (("train", train_s), ("val", val_s), ("test", test_s)):
        if not data:
            continue
        _, scores, labels = _eval_split(model, data, vocab, l_max, weights, cfg.batch_size)
        metrics[split] = evaluate(scores, labels)
    return TrainResult(
        model=model,
        vocab=vocab,
        stats=stats,
        l_max=l_max,
        curves=curves,
        best_epoch=best_epoch,
        n_truncated=n_truncated,
        class_weights=weights,
        metrics=metrics,
        splits=(train_s, val_s, test_s),
    )


# -- random search ----------------------------------------------------------------------


@dataclass
class TrialRow:
    index: int
    d_model: int
    n_layers: int
    dropout: float
    conv_kernel: int
    lr: float
    val_auc: float
    val_accuracy: float
    selection_score: float


@dataclass
class SearchResult:
    trials: list[TrialRow]
    best_index: int
    best_model_cfg: ModelConfig
    best_train_cfg: TrainConfig


def random_search(
    samples: Sequence[SampleRecord],
    budget: int,
    seed: int,
    base_model: ModelConfig,
    base_train: TrainConfig,
) -> SearchResult:
    """Samples the declared grid, selects by mean(val AUC, val accuracy);
    ties break toward the earlier trial."""
    if budget < 1:
        raise ConfigError(f"search budget must be >= 1, got {budget}")
    rng = np.random.default_rng(seed)
    trials: list[TrialRow] = []
    best: tuple[float, int] | None = None
    configs: list[tuple[ModelConfig, TrainConfig]] = []
    for t in range(budget):
        d_model = int(rng.choice([64, 128]))
        n_layers = int(rng.integers(1, 5))
        drop = float(rng.uniform(0.02, 0.4))
        kernel = int(rng.choice([3, 5]))
        lr = float(rng.uniform(1e-3, 2e-3))
        m_cfg = replace(
            base_model,
            d_model=d_model,
            n_layers=n_layers,
            dropout=drop,
            conv_kernel=kernel,
            ff_hidden=32,
        )
        t_cfg = replace(base_train, lr=lr)
        result = train_model(samples, m_cfg, t_cfg)
        val = result.metrics["val"]
        val_auc = val.auc if val.auc is not None else 0.0
        score = 0.5 * (val_auc + val.accuracy)
        trials.append(TrialRow(t, d_model, n_layers, drop, kernel, lr, val_auc, val.accuracy, score))
        configs.append((m_cfg, t_cfg))
        if best is None or score > best[0]:
            best = (score, t)
    best_idx = best[1]
    return SearchResult(
        trials=trials,
        best_index=best_idx,
        best_model_cfg=configs[best_idx][0],
        best_train_cfg=configs[best_idx][1],
    )


def write_trials_csv(path: str | Path, result: SearchResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "d_model", "n_layers", "dropout", "conv_kernel", "lr", "val_auc", "val_accuracy", "selection_score", "selected"])
        for row in result.trials:
            writer.writerow(
                [row.index, row.d_model, row.n_layers, repr(row.dropout), row.conv_kernel, repr(row.lr), repr(row.val_auc), repr(row.val_accuracy), repr(row.selection_score), int(row.index == result.best_index)]
            )
