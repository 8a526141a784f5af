"""Cohort data model, phenotype table, channel normalization, interchange io.

The interchange format is line-oriented text.  Doubles are written with
repr(), whose shortest round-trip guarantee makes write -> read -> write
bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, VcfParseError

N_CHANNELS = 8
CHANNEL_NAMES = ("GT", "DP", "DPF", "COV_REF", "COV_ALT", "FRS", "GT_CONF", "GT_CONF_PERCENTILE")
# GT is an encoding and FRS a fraction; both already live in [0, 1] and
# keep fixed bounds so that a missing FRS written as 0 stays exactly 0.
_FIXED_BOUND_CHANNELS = (0, 5)

COHORT_MAGIC = "vampnet-cohort/1"


@dataclass
class SampleRecord:
    """One isolate: its variant tokens and the aligned quality matrix."""

    sample_id: str
    label: int
    tokens: list[str]
    features: np.ndarray  # [N, 8] float64, rows aligned with tokens

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64).reshape(
            len(self.tokens), N_CHANNELS
        )
        if self.label not in (0, 1):
            raise ContractError(f"sample {self.sample_id}: label must be 0 or 1, got {self.label}")

    @property
    def n_variants(self) -> int:
        return len(self.tokens)


def assemble_sample(sample_id: str, label: int, tokens: Sequence[str], features) -> SampleRecord:
    tokens = list(tokens)
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        features = features.reshape(0, N_CHANNELS)
    if features.ndim != 2 or features.shape != (len(tokens), N_CHANNELS):
        raise ContractError(
            f"sample {sample_id}: {len(tokens)} tokens but feature matrix of shape {features.shape}"
        )
    return SampleRecord(sample_id, int(label), tokens, features)


# -- phenotype table -----------------------------------------------------

_PHENO_HEADER = ["sample_id", "drug", "label", "quality"]


def read_phenotypes(path: str | Path, drug: str) -> dict[str, int]:
    """Binary labels for one drug; rows whose quality is LOW are dropped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise VcfParseError("phenotype file is empty", 1) from None
        if header != _PHENO_HEADER:
            raise VcfParseError(f"phenotype header must be {','.join(_PHENO_HEADER)}", 1)
        labels: dict[str, int] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise VcfParseError(f"expected 4 phenotype columns, got {len(row)}", line_no)
            sample_id, row_drug, label, quality = row
            if row_drug != drug:
                continue
            if quality == "LOW":
                continue
            if label not in ("0", "1"):
                raise VcfParseError(f"label must be 0 or 1, got {label!r}", line_no)
            if sample_id in labels:
                raise VcfParseError(f"duplicate phenotype for sample {sample_id!r}", line_no)
            labels[sample_id] = int(label)
    return labels


# -- channel normalization --------------------------------------------------


@dataclass
class ChannelStats:
    """Per-channel min/max fitted on the training split only."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.ascontiguousarray(self.lo, dtype=np.float64).reshape(N_CHANNELS)
        self.hi = np.ascontiguousarray(self.hi, dtype=np.float64).reshape(N_CHANNELS)


def fit_normalizer(samples: Iterable[SampleRecord]) -> ChannelStats:
    rows = [s.features for s in samples if s.n_variants > 0]
    if not rows:
        raise ConfigError("cannot fit a normalizer: training split has no variant rows")
    stacked = np.concatenate(rows, axis=0)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    for c in _FIXED_BOUND_CHANNELS:
        lo[c], hi[c] = 0.0, 1.0
    return ChannelStats(lo, hi)


def apply_normalizer(stats: ChannelStats, features: np.ndarray) -> np.ndarray:
    """Map raw channels into [0, 1]; constant channels collapse to 0."""
    features = np.asarray(features, dtype=np.float64)
    span = stats.hi - stats.lo
    safe = np.where(span > 0, span, 1.0)
    out = (features - stats.lo) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def normalize_samples(stats: ChannelStats, samples: Iterable[SampleRecord]) -> list[SampleRecord]:
    return [
        SampleRecord(s.sample_id, s.label, list(s.tokens), apply_normalizer(stats, s.features))
        for s in samples
    ]


# -- interchange io -----------------------------------------------------------


def write_cohort(path: str | Path, samples: Sequence[SampleRecord], drug: str) -> None:
    lines = [f"{COHORT_MAGIC}\tdrug={drug}"]
    for s in samples:
        if "\t" in s.sample_id or "\n" in s.sample_id:
            raise ContractError(f"sample id {s.sample_id!r} contains a separator character")
        parts = [s.sample_id, str(s.label), str(s.n_variants)]
        parts.extend(s.tokens)
        parts.extend(repr(float(v)) for v in s.features.ravel())
        lines.append("\t".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cohort(path: str | Path) -> tuple[list[SampleRecord], str]:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise VcfParseError("empty cohort file", 1)
    head = lines[0].split("\t")
    if len(head) != 2 or head[0] != COHORT_MAGIC or not head[1].startswith("drug="):
        raise VcfParseError(f"expected header '{COHORT_MAGIC}\\tdrug=<name>'", 1)
    drug = head[1][len("drug=") :]
    samples: list[SampleRecord] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise VcfParseError("sample line needs at least id, label, count", line_no)
        sample_id, label_s, n_s = parts[0], parts[1], parts[2]
        if label_s not in ("0", "1"):
            raise VcfParseError(f"label must be 0 or 1, got {label_s!r}", line_no)
        try:
            n = int(n_s)
        except ValueError:
            raise VcfParseError(f"bad variant count {n_s!r}", line_no) from None
        if n < 0 or len(parts) != 3 + n + N_CHANNELS * n:
            raise VcfParseError(
                f"expected {3 + n + N_CHANNELS * n} fields for {n} variants, got {len(parts)}", line_no
            )
        tokens = parts[3 : 3 + n]
        try:
            values = np.array([float(v) for v in parts[3 + n :]], dtype=np.float64)
        except ValueError:
            raise VcfParseError("bad feature value", line_no) from None
        if values.size and not np.isfinite(values).all():
            raise VcfParseError("non-finite feature value", line_no)
        samples.append(SampleRecord(sample_id, int(label_s), tokens, values.reshape(n, N_CHANNELS)))
    return samples, drug
