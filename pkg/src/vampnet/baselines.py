"""Presence/absence baselines: chi-squared screening, an MLP, a pooled CNN.

These classifiers see only which variants a sample carries — a binary
samples x variants matrix over a chi-squared-selected column set — and
deliberately ignore quality channels and set structure.  They provide
the reference points the two-path network is compared against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cohort import SampleRecord
from .errors import ConfigError, ContractError, NumericError
from .init import conv_kernel, linear
from .optim import make_optimizer
from .train import (
    EpochRow,
    MetricsReport,
    auc_score,
    class_weights_from_counts,
    evaluate,
    split_cohort,
    weighted_ce,
)

# -- chi-squared variant screening -------------------------------------------


def _position_key(token: str) -> tuple[int, str]:
    head = token.split("_", 1)[0]
    return (int(head) if head.isdigit() else 0, token)


@dataclass
class SelectedVariant:
    token: str
    chi2: float
    pvalue: float


def chi2_stat(present_pos: int, present_neg: int, absent_pos: int, absent_neg: int) -> tuple[float, float]:
    """Pearson chi-squared (1 dof, no continuity correction) for one 2x2
    presence-by-label table, with its survival p-value Q(1/2, x/2).

    A degenerate presence margin (variant in all samples or in none)
    yields statistic 0 by convention, so such variants are never kept.
    Every intermediate product stays below 2^53 at cohort scale, so the
    single final division is correctly rounded and the value matches a
    recomputation from integer cell counts bit for bit.
    """
    a, b, c, d = present_pos, present_neg, absent_pos, absent_neg
    if min(a, b, c, d) < 0:
        raise ContractError(f"contingency cells must be counts, got {(a, b, c, d)}")
    if a + c == 0 or b + d == 0:
        raise ContractError("chi-squared needs both classes present in the cohort")
    if a + b == 0 or c + d == 0:
        return 0.0, 1.0
    n = a + b + c + d
    stat = n * float(a * d - b * c) ** 2 / float((a + b) * (c + d) * (a + c) * (b + d))
    return stat, math.erfc(math.sqrt(stat / 2.0))


def chi2_select(samples: Sequence[SampleRecord], alpha: float = 0.001) -> list[SelectedVariant]:
    """Per-variant association screen; keeps p < alpha, sorted by p ascending.

    Ties on p (identical tables) fall back to genomic-position order so
    the selected column order is deterministic.
    """
    if not (0.0 < alpha <= 1.0):
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    if not samples:
        raise ContractError("chi-squared selection needs a non-empty cohort")
    n_pos = sum(s.label for s in samples)
    n_neg = len(samples) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("chi-squared selection needs both classes present")
    counts: dict[str, list[int]] = {}  # token -> [present_pos, present_neg]
    for s in samples:
        for t in set(s.tokens):
            cell = counts.setdefault(t, [0, 0])
            cell[1 - s.label] += 1
    rows = []
    for token, (a, b) in counts.items():
        stat, p = chi2_stat(a, b, n_pos - a, n_neg - b)
        if p < alpha:
            rows.append(SelectedVariant(token, stat, p))
    rows.sort(key=lambda r: (r.pvalue, _position_key(r.token)))
    return rows


def write_selection_tsv(path: str | Path, rows: Sequence[SelectedVariant]) -> None:
    with open(path, "w") as fh:
        fh.write("token\tchi2\tpvalue\n")
        for r in rows:
            fh.write(f"{r.token}\t{r.chi2!r}\t{r.pvalue!r}\n")


def read_selection_tsv(path: str | Path) -> list[SelectedVariant]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != "token\tchi2\tpvalue":
            raise ContractError(f"unexpected selection header {header!r}")
        return [
            SelectedVariant(tok, float(chi2), float(p))
            for tok, chi2, p in (line.rstrip("\n").split("\t") for line in fh if line.strip())
        ]


# -- presence matrix ----------------------------------------------------------


@dataclass
class PresenceMatrix:
    matrix: np.ndarray  # [n_samples, n_columns] of {0.0, 1.0}
    columns: list[str]  # column index -> variant token

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.columns):
            raise ContractError(f"matrix {self.matrix.shape} does not match {len(self.columns)} columns")
        if len(set(self.columns)) != len(self.columns):
            raise ContractError("presence columns must be distinct variants")
        if not np.isin(self.matrix, (0.0, 1.0)).all():
            raise ContractError("presence entries must be 0 or 1")


def presence_matrix(samples: Sequence[SampleRecord], columns: Sequence[str]) -> PresenceMatrix:
    """Binary encoding of the cohort over a fixed, ordered column set.

    Variants outside `columns` are simply dropped; the column order
    (normally chi-squared selection order) is preserved, which is what
    makes the pooled CNN position-sensitive by construction.
    """
    col_index = {t: j for j, t in enumerate(columns)}
    out = np.zeros((len(samples), len(columns)))
    for i, s in enumerate(samples):
        for t in s.tokens:
            j = col_index.get(t)
            if j is not None:
                out[i, j] = 1.0
    return PresenceMatrix(out, list(columns))


# -- the two classifiers ------------------------------------------------------


@dataclass
class MlpConfig:
    hidden_dims: tuple[int, ...] = (1024, 128, 128)
    dropout: float = 0.1315
    activation: str = "gelu"

    def __post_init__(self):
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class CnnBaselineConfig:
    filters: tuple[int, ...] = (96, 128, 256)
    kernels: tuple[int, ...] = (5, 9, 2)
    pools: tuple[int, ...] = (3, 3, 3)
    dropout: float = 0.1487
    activation: str = "relu"

    def __post_init__(self):
        if not (len(self.filters) == len(self.kernels) == len(self.pools)):
            raise ConfigError("filters, kernels, and pools must have equal length")
        if min(self.filters) < 1 or min(self.kernels) < 1 or min(self.pools) < 1:
            raise ConfigError("filters, kernels, and pools must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


def conv_stack_length(n_columns: int, kernels: Sequence[int], pools: Sequence[int]) -> int:
    """Length left on the variant axis after each valid conv + max-pool
    stage; 0 means the matrix is narrower than the receptive field."""
    length = n_columns
    for k, p in zip(kernels, pools):
        length = length - (k - 1)
        if length < 1:
            return 0
        length //= p
        if length < 1:
            return 0
    return length


class MlpBaseline:
    """Feed-forward classifier over binary presence rows."""

    def __init__(self, n_columns: int, cfg: MlpConfig, seed: int):
        if n_columns < 1:
            raise ConfigError("presence matrix needs at least one column")
        self.cfg = cfg
        self.n_columns = n_columns
        self.seed = int(seed)
        self.act = ad.activation_fn(cfg.activation)
        rng = np.random.default_rng(seed)
        dims = [n_columns, *cfg.hidden_dims, 2]
        self.layers = [linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"dense{i}/w"] = w
            out[f"dense{i}/b"] = b
        return out

    def forward(self, rows: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if rows.ndim != 2 or rows.shape[1] != self.n_columns:
            raise ContractError(f"rows {rows.shape} do not match {self.n_columns} columns")
        x = ad.constant(rows)
        for w, b in self.layers[:-1]:
            x = self.act(ad.add(ad.matmul(x, w), b))
            x = ad.dropout(x, self.cfg.dropout, train, rng)
        w, b = self.layers[-1]
        return ad.add(ad.matmul(x, w), b)


class CnnBaseline:
    """1-D conv + max-pool classifier over the ordered variant axis."""

    def __init__(self, n_columns: int, cfg: CnnBaselineConfig, seed: int):
        if conv_stack_length(n_columns, cfg.kernels, cfg.pools) < 1:
            raise ConfigError(
                f"{n_columns} columns are narrower than the conv stack's receptive field"
            )
        self.cfg = cfg
        self.n_columns = n_columns
        self.seed = int(seed)
        self.act = ad.activation_fn(cfg.activation)
        rng = np.random.default_rng(seed)
        self.convs = []
        c_in = 1
        for c_out, k in zip(cfg.filters, cfg.kernels):
            self.convs.append(conv_kernel(rng, c_out, c_in, k))
            c_in = c_out
        flat = cfg.filters[-1] * conv_stack_length(n_columns, cfg.kernels, cfg.pools)
        self.head = linear(rng, flat, 2)

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"conv{i}/w"] = w
            out[f"conv{i}/b"] = b
        out["head/w"] = self.head[0]
        out["head/b"] = self.head[1]
        return out

    def forward(self, rows: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if rows.ndim != 2 or rows.shape[1] != self.n_columns:
            raise ContractError(f"rows {rows.shape} do not match {self.n_columns} columns")
        x = ad.reshape(ad.constant(rows), (rows.shape[0], 1, rows.shape[1]))
        for (w, b), pool in zip(self.convs, self.cfg.pools):
            x = ad.maxpool1d(self.act(ad.conv1d(x, w, b)), pool)
            x = ad.dropout(x, self.cfg.dropout, train, rng)
        x = ad.reshape(x, (rows.shape[0], -1))
        w, b = self.head
        return ad.add(ad.matmul(x, w), b)


# -- shared training loop ------------------------------------------------------


@dataclass
class BaselineTrainConfig:
    seed: int
    max_epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    optimizer: str = "adam"
    momentum: float = 0.9
    patience: int = 10
    alpha: float = 0.001
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    stratified: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass
class BaselineResult:
    model: MlpBaseline | CnnBaseline
    selection: list[SelectedVariant]
    curves: list[EpochRow]
    best_epoch: int
    class_weights: np.ndarray
    metrics: dict[str, MetricsReport]
    splits: tuple[list[SampleRecord], list[SampleRecord], list[SampleRecord]]


def _scores(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=-1)


def _eval_rows(model, rows: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    logits = model.forward(rows, train=False)
    loss = weighted_ce(logits, labels, weights).data.item()
    return loss, _scores(logits.data)


def train_presence_baseline(
    samples: Sequence[SampleRecord],
    kind: str,
    cfg: BaselineTrainConfig,
    mlp_cfg: MlpConfig | None = None,
    cnn_cfg: CnnBaselineConfig | None = None,
    verbose: bool = False,
) -> BaselineResult:
    """Chi-squared screen on the training split, then fit the requested
    presence classifier under the usual weighted-CE / early-stop contract."""
    if kind not in ("mlp", "cnn"):
        raise ConfigError(f"baseline kind must be 'mlp' or 'cnn', got {kind!r}")
    train_s, val_s, test_s = split_cohort(samples, cfg.seed, cfg.fractions, cfg.stratified)
    if not train_s or not val_s:
        raise ConfigError("train and validation splits must be non-empty")
    selection = chi2_select(train_s, cfg.alpha)
    if not selection:
        raise ContractError(f"no variant passes the chi-squared screen at alpha={cfg.alpha}")
    columns = [r.token for r in selection]
    mats = {
        "train": (presence_matrix(train_s, columns).matrix, np.array([s.label for s in train_s])),
        "val": (presence_matrix(val_s, columns).matrix, np.array([s.label for s in val_s])),
        "test": (presence_matrix(test_s, columns).matrix, np.array([s.label for s in test_s])),
    }

    if kind == "mlp":
        model = MlpBaseline(len(columns), mlp_cfg or MlpConfig(), seed=cfg.seed)
    else:
        model = CnnBaseline(len(columns), cnn_cfg or CnnBaselineConfig(), seed=cfg.seed)

    x_train, y_train = mats["train"]
    n1 = int(y_train.sum())
    weights = class_weights_from_counts(len(y_train) - n1, n1)
    params = model.params()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.momentum)
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(c) for c in ss.spawn(2))

    curves: list[EpochRow] = []
    best_score = -np.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {}
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(y_train))
        ep_losses, ep_sizes, ep_scores, ep_labels = [], [], [], []
        for start in range(0, len(y_train), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            logits = model.forward(x_train[chunk], train=True, rng=dropout_rng)
            loss = weighted_ce(logits, y_train[chunk], weights)
            if not np.isfinite(loss.data):
                raise NumericError(f"baseline training loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            ep_losses.append(loss.data.item())
            ep_sizes.append(len(chunk))
            ep_scores.append(_scores(logits.data))
            ep_labels.append(y_train[chunk])
        train_scores = np.concatenate(ep_scores)
        train_labels = np.concatenate(ep_labels)
        train_loss = float(np.average(ep_losses, weights=ep_sizes))
        curves.append(
            EpochRow(epoch, "train", train_loss, evaluate(train_scores, train_labels).accuracy, auc_score(train_scores, train_labels))
        )
        val_loss, val_scores = _eval_rows(model, *mats["val"], weights)
        val_report = evaluate(val_scores, mats["val"][1])
        curves.append(EpochRow(epoch, "val", val_loss, val_report.accuracy, val_report.auc))
        if verbose:
            print(f"epoch {epoch}: train loss {train_loss:.4f}, val loss {val_loss:.4f}, val auc {val_report.auc}")
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
    for split, (rows, labels) in mats.items():
        if not len(labels):
            continue
        _, scores = _eval_rows(model, rows, labels, weights)
        metrics[split] = evaluate(scores, labels)
    return BaselineResult(
        model=model,
        selection=selection,
        curves=curves,
        best_epoch=best_epoch,
        class_weights=weights,
        metrics=metrics,
        splits=(train_s, val_s, test_s),
    )
