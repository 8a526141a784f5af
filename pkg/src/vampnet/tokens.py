"""Variant token encoding: static and subword vocabularies, batching.

Ids 0 and 1 are reserved for PAD and UNK in both modes.  A collated
batch is width-padded with PAD ids, a boolean validity mask, and
feature rows forced to zero wherever the mask is false.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cohort import N_CHANNELS, SampleRecord
from .errors import ConfigError, ContractError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

STATIC = "static"
SUBWORD = "subword"


class Vocabulary:
    """Maps token strings (static) or pieces (subword) to dense ids."""

    def __init__(self, mode: str, entries: Sequence[str]):
        if mode not in (STATIC, SUBWORD):
            raise ConfigError(f"unknown vocabulary mode {mode!r}")
        self.mode = mode
        self.entries = list(entries)
        if len(set(self.entries)) != len(self.entries):
            raise ContractError("vocabulary entries must be unique")
        if PAD_TOKEN in self.entries or UNK_TOKEN in self.entries:
            raise ContractError("reserved entries cannot appear in the vocabulary body")
        self._ids = {e: i + 2 for i, e in enumerate(self.entries)}
        self._max_len = max((len(e) for e in self.entries), default=0)

    @property
    def size(self) -> int:
        return len(self.entries) + 2

    def id_of(self, entry: str) -> int:
        return self._ids.get(entry, UNK_ID)

    def entry_of(self, idx: int) -> str:
        if idx == PAD_ID:
            return PAD_TOKEN
        if idx == UNK_ID:
            return UNK_TOKEN
        if 2 <= idx < self.size:
            return self.entries[idx - 2]
        raise ContractError(f"id {idx} out of range for vocabulary of size {self.size}")

    def encode(self, token: str) -> list[int]:
        """Token -> id list: one id (static) or greedy longest-match pieces."""
        if self.mode == STATIC:
            return [self.id_of(token)]
        ids = []
        i = 0
        while i < len(token):
            match = None
            for width in range(min(self._max_len, len(token) - i), 0, -1):
                piece = token[i : i + width]
                if piece in self._ids:
                    match = piece
                    break
            if match is None:
                ids.append(UNK_ID)  # character never seen in training
                i += 1
            else:
                ids.append(self._ids[match])
                i += len(match)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.entry_of(i) for i in ids)


def build_static_vocab(samples: Iterable[SampleRecord]) -> Vocabulary:
    """One id per unique canonical token, in sorted order for stability."""
    seen = sorted({t for s in samples for t in s.tokens})
    return Vocabulary(STATIC, seen)


def train_subword(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Frequency-based merge training; fully deterministic.

    target_size counts content pieces (single characters plus merges);
    ties on merge frequency go to the lexicographically smallest pair.
    """
    counts = Counter(corpus)
    alphabet = sorted({ch for token in counts for ch in token})
    if not alphabet:
        raise ConfigError("subword training needs a non-empty corpus")
    if target_size < len(alphabet):
        raise ConfigError(
            f"subword target size {target_size} is smaller than the alphabet ({len(alphabet)})"
        )
    sequences = {token: tuple(token) for token in counts}
    pieces = list(alphabet)
    while len(pieces) < target_size:
        pair_counts: Counter = Counter()
        for token, seq in sequences.items():
            weight = counts[token]
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += weight
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(pair for pair, c in pair_counts.items() if c == best_count)
        merged = best[0] + best[1]
        pieces.append(merged)
        for token, seq in sequences.items():
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == best[0] and seq[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            sequences[token] = tuple(out)
    return Vocabulary(SUBWORD, pieces)


def shuffle_augment(record: SampleRecord, rng: np.random.Generator) -> SampleRecord:
    """Jointly permute tokens and their feature rows; labels untouched."""
    n = record.n_variants
    if n <= 1:
        return record
    perm = rng.permutation(n)
    return SampleRecord(
        record.sample_id,
        record.label,
        [record.tokens[i] for i in perm],
        record.features[perm],
    )


@dataclass
class PaddedBatch:
    """Width-padded batch; in subword mode token_ids index a batch-local
    piece table whose row 0 is the empty PAD bag."""

    token_ids: np.ndarray  # [B, L] int64
    features: np.ndarray  # [B, L, 8] float64, zero under the mask
    mask: np.ndarray  # [B, L] bool
    lengths: np.ndarray  # [B] int64, after truncation
    labels: np.ndarray  # [B] int64
    n_truncated: int = 0
    piece_flat: np.ndarray | None = None
    piece_offsets: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return self.token_ids.shape[0]

    @property
    def width(self) -> int:
        return self.token_ids.shape[1]


def collate(records: Sequence[SampleRecord], vocab: Vocabulary, l_max: int | None = None) -> PaddedBatch:
    if not records:
        raise ContractError("cannot collate an empty batch")
    if l_max is not None and l_max < 1:
        raise ConfigError(f"l_max must be >= 1, got {l_max}")
    kept = []
    n_truncated = 0
    for r in records:
        n = r.n_variants
        if l_max is not None and n > l_max:
            n_truncated += n - l_max
            n = l_max
        kept.append(n)
    width = max(max(kept), 1)
    B = len(records)
    token_ids = np.zeros((B, width), dtype=np.int64)
    features = np.zeros((B, width, N_CHANNELS), dtype=np.float64)
    mask = np.zeros((B, width), dtype=bool)
    lengths = np.array(kept, dtype=np.int64)
    labels = np.array([r.label for r in records], dtype=np.int64)

    piece_flat = piece_offsets = None
    if vocab.mode == STATIC:
        for b, (r, n) in enumerate(zip(records, kept)):
            for l in range(n):
                token_ids[b, l] = vocab.encode(r.tokens[l])[0]
            features[b, :n] = r.features[:n]
            mask[b, :n] = True
    else:
        # batch-local table of distinct token strings; row 0 is PAD (empty bag)
        rows: dict[str, int] = {}
        bags: list[list[int]] = [[]]
        for b, (r, n) in enumerate(zip(records, kept)):
            for l in range(n):
                tok = r.tokens[l]
                row = rows.get(tok)
                if row is None:
                    row = len(bags)
                    rows[tok] = row
                    bags.append(vocab.encode(tok))
                token_ids[b, l] = row
            features[b, :n] = r.features[:n]
            mask[b, :n] = True
        piece_flat = np.array([p for bag in bags for p in bag], dtype=np.int64)
        piece_offsets = np.cumsum([0] + [len(bag) for bag in bags], dtype=np.int64)
    return PaddedBatch(
        token_ids=token_ids,
        features=features,
        mask=mask,
        lengths=lengths,
        labels=labels,
        n_truncated=n_truncated,
        piece_flat=piece_flat,
        piece_offsets=piece_offsets,
    )


def length_percentile(samples: Sequence[SampleRecord], pct: float = 99.0) -> int:
    """Truncation cap: the given percentile of set sizes, at least 1."""
    if not samples:
        raise ConfigError("cannot compute a length percentile of an empty split")
    lengths = np.array([s.n_variants for s in samples])
    return max(1, int(np.percentile(lengths, pct)))
