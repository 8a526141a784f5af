"""Synthetic cohorts with planted effects and a quality gate.

Labels follow a declared rule before noise: a sample is resistant iff
any planted marginal variant is present with FRS >= tau, or both
members of a planted pair are present with FRS >= tau.  FRS tracks a
per-sample latent quality, and GT_CONF_PERCENTILE is a noisier copy of
FRS, so quality-aware models have headroom over token-only models.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import SampleRecord, assemble_sample
from .errors import ConfigError

_REF_CYCLE = "ACGT"
_ALT_CYCLE = "GTAC"  # alt differs from ref at every index

FRS_CHANNEL = 5
PCT_CHANNEL = 7


def token_name(index: int) -> str:
    ref = _REF_CYCLE[index % 4]
    alt = _ALT_CYCLE[index % 4]
    return f"{100001 + 37 * index}_{ref}>{alt}"


@dataclass
class SyntheticSpec:
    n_samples: int = 2000
    vocab_size: int = 500
    background_rate: float = 12.0  # Poisson mean of noise variants per sample
    n_marginal: int = 2
    n_pairs: int = 2
    marginal_effect: float = 0.26  # presence probability of each marginal variant
    pair_effect: float = 0.22  # joint presence probability of each pair
    lone_rate: float = 0.06  # probability of each pair member appearing alone
    frs_threshold: float = 0.5
    label_noise: float = 0.05
    frs_jitter: float = 0.02
    percentile_jitter: float = 0.35
    quality_alpha: float = 2.0  # Beta shape of the latent per-sample quality
    quality_beta: float = 1.0
    seed: int = 0
    drug: str = "SYNTH"

    def __post_init__(self):
        if not (0.0 < self.frs_threshold < 1.0):
            raise ConfigError(f"frs_threshold must lie in (0, 1), got {self.frs_threshold}")
        if not (0.0 <= self.label_noise < 0.5):
            raise ConfigError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        planted = self.n_marginal + 2 * self.n_pairs
        if self.vocab_size < planted + 1:
            raise ConfigError(
                f"vocab_size {self.vocab_size} cannot hold {planted} planted variants plus background"
            )
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        for name in ("marginal_effect", "pair_effect", "lone_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.pair_effect + 2 * self.lone_rate > 1.0:
            raise ConfigError("pair_effect + 2*lone_rate must not exceed 1")
        if self.quality_alpha <= 0.0 or self.quality_beta <= 0.0:
            raise ConfigError("quality Beta shapes must be positive")


@dataclass
class GroundTruth:
    """Which variants are causal, and with what presence probability."""

    marginals: list[str]
    pairs: list[tuple[str, str]]
    marginal_effect: float
    pair_effect: float
    frs_threshold: float

    @property
    def planted(self) -> list[str]:
        return self.marginals + [t for pair in self.pairs for t in pair]


def true_label(truth: GroundTruth, tokens: Sequence[str], features: np.ndarray) -> int:
    """The noise-free labeling rule, computed from stored FRS values."""
    frs = {t: features[i, FRS_CHANNEL] for i, t in enumerate(tokens)}
    tau = truth.frs_threshold
    for m in truth.marginals:
        if m in frs and frs[m] >= tau:
            return 1
    for u, v in truth.pairs:
        if u in frs and v in frs and frs[u] >= tau and frs[v] >= tau:
            return 1
    return 0


def generate(spec: SyntheticSpec) -> tuple[list[SampleRecord], GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    vocab = [token_name(i) for i in range(spec.vocab_size)]
    planted_count = spec.n_marginal + 2 * spec.n_pairs
    planted_idx = rng.choice(spec.vocab_size, size=planted_count, replace=False)
    marginals = [vocab[i] for i in planted_idx[: spec.n_marginal]]
    pairs = [
        (vocab[planted_idx[spec.n_marginal + 2 * p]], vocab[planted_idx[spec.n_marginal + 2 * p + 1]])
        for p in range(spec.n_pairs)
    ]
    truth = GroundTruth(
        marginals=marginals,
        pairs=pairs,
        marginal_effect=spec.marginal_effect,
        pair_effect=spec.pair_effect,
        frs_threshold=spec.frs_threshold,
    )
    planted_set = set(truth.planted)
    background_pool = np.array([i for i in range(spec.vocab_size) if vocab[i] not in planted_set])
    order = {t: i for i, t in enumerate(vocab)}

    samples = []
    for s in range(spec.n_samples):
        q = rng.beta(spec.quality_alpha, spec.quality_beta)  # latent sample quality that FRS tracks
        present: set[str] = set()
        for m in marginals:
            if rng.random() < spec.marginal_effect:
                present.add(m)
        for u, v in pairs:
            r = rng.random()
            if r < spec.pair_effect:
                present.update((u, v))
            elif r < spec.pair_effect + spec.lone_rate:
                present.add(u)
            elif r < spec.pair_effect + 2 * spec.lone_rate:
                present.add(v)
        k = min(int(rng.poisson(spec.background_rate)), len(background_pool))
        if k:
            present.update(vocab[i] for i in rng.choice(background_pool, size=k, replace=False))
        tokens = sorted(present, key=order.__getitem__)  # genome-position order
        n = len(tokens)
        feats = np.empty((n, 8))
        feats[:, 0] = np.where(rng.random(n) < 0.9, 1.0, 0.5)  # GT
        feats[:, 1] = rng.random(n)  # DP
        feats[:, 2] = rng.random(n)  # DPF
        feats[:, 3] = rng.random(n)  # COV_REF
        feats[:, 4] = rng.random(n)  # COV_ALT
        feats[:, FRS_CHANNEL] = np.clip(q + rng.normal(0.0, spec.frs_jitter, n), 0.0, 1.0)
        feats[:, 6] = rng.random(n)  # GT_CONF
        feats[:, PCT_CHANNEL] = np.clip(
            feats[:, FRS_CHANNEL] + rng.normal(0.0, spec.percentile_jitter, n), 0.0, 1.0
        )
        label = true_label(truth, tokens, feats)
        if rng.random() < spec.label_noise:
            label = 1 - label
        samples.append(assemble_sample(f"syn{s:05d}", label, tokens, feats))
    return samples, truth


def bayes_optimal_auc(samples: Sequence[SampleRecord], truth: GroundTruth) -> float:
    """AUC ceiling: the noise-free rule scored against the noisy labels,
    counted over all positive/negative pairs with half credit for ties."""
    rule = np.array([true_label(truth, s.tokens, s.features) for s in samples], dtype=np.float64)
    labels = np.array([s.label for s in samples])
    pos = rule[labels == 1]
    neg = rule[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return 1.0
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def write_truth_csv(path: str | Path, truth: GroundTruth) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["element", "kind", "members", "effect"])
        for i, m in enumerate(truth.marginals):
            writer.writerow([f"m{i}", "marginal", m, repr(truth.marginal_effect)])
        for i, (u, v) in enumerate(truth.pairs):
            writer.writerow([f"p{i}", "pair", f"{u}|{v}", repr(truth.pair_effect)])


def read_truth_csv(path: str | Path) -> GroundTruth:
    marginals: list[str] = []
    pairs: list[tuple[str, str]] = []
    m_eff = p_eff = 0.0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["element", "kind", "members", "effect"]:
            raise ConfigError("unrecognized ground-truth ledger header")
        for row in reader:
            _, kind, members, effect = row
            if kind == "marginal":
                marginals.append(members)
                m_eff = float(effect)
            elif kind == "pair":
                u, v = members.split("|")
                pairs.append((u, v))
                p_eff = float(effect)
            else:
                raise ConfigError(f"unknown ledger element kind {kind!r}")
    return GroundTruth(marginals, pairs, m_eff, p_eff, frs_threshold=0.5)
