"""Interpretability: attributions, channel ablation, interaction networks.

Attributions use Integrated Gradients on the token embeddings with the
zero (PAD) embedding as baseline, so the sum of attributions matches the
logit delta from the baseline up to integration error.  Interaction
networks aggregate first-layer attention into a symmetric variant graph
that feeds hub detection and community search.
"""

from __future__ import annotations

import csv
import dataclasses
import heapq
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cohort import CHANNEL_NAMES, SampleRecord
from .errors import ConfigError, ContractError
from .model import VampNet
from .tokens import PaddedBatch, Vocabulary, collate
from .train import auc_score, evaluate

CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNEL_NAMES)}

RESISTANT_CLASS = 1


def _position_key(token: str) -> tuple[int, str]:
    head = token.split("_", 1)[0]
    return (int(head) if head.isdigit() else 0, token)


def resistant_logit_sum(
    model: VampNet,
    batch: PaddedBatch,
    embeddings: Tensor | None = None,
    features: Tensor | None = None,
) -> Tensor:
    """Sum over the batch of the resistant-class logit (eval mode)."""
    logits, _ = model.forward(batch, train=False, embeddings=embeddings, features=features)
    pick = np.zeros((2, 1))
    pick[RESISTANT_CLASS, 0] = 1.0
    return ad.sum_all(ad.matmul(logits, ad.constant(pick)))


def resistant_logits(model: VampNet, batch: PaddedBatch, embeddings: Tensor | None = None) -> np.ndarray:
    logits, _ = model.forward(batch, train=False, embeddings=embeddings)
    return logits.data[:, RESISTANT_CLASS].copy()


def _batch_row(batch: PaddedBatch, i: int) -> PaddedBatch:
    """Single-sample view; the subword piece table stays shared."""
    return dataclasses.replace(
        batch,
        token_ids=batch.token_ids[i : i + 1],
        features=batch.features[i : i + 1],
        mask=batch.mask[i : i + 1],
        lengths=batch.lengths[i : i + 1],
        labels=batch.labels[i : i + 1],
    )


def _adaptive_attr_row(model, row: PaddedBatch, base: np.ndarray, steps: int) -> np.ndarray:
    """Budgeted adaptive Simpson quadrature of one sample's gradient path.

    The path integral is taken in the substituted variable u = sqrt(alpha):
    layer normalization concentrates the directional derivative near the
    zero-embedding end of the path (with structure at scales down to the
    square of the normalizer epsilon, where iterated normalizations
    transition), and the substitution both stretches that boundary layer
    across the mesh and damps endpoint blow-up through the Jacobian 2u.
    Starting from a coarse dyadic u-grid plus a geometric ladder of nodes
    toward u = 0, every segment gets a midpoint evaluation, and the
    segment whose midpoint deviates most from its endpoint mean is
    bisected again until the evaluation budget is spent.  Each measured
    segment contributes a Simpson panel, written as the fine trapezoid
    plus a correction that vanishes for integrands linear in u; the
    Jacobian-weighted integrand of a linear model is exactly such, and
    dyadic nodes make its trapezoid sum telescope, so linear models
    integrate exactly.
    """

    grads: dict[float, np.ndarray] = {}  # u -> Jacobian-weighted gradient 2u * dF/de
    hvals: dict[float, float] = {}  # u -> directional value of the above

    def eval_at(u: float) -> None:
        emb = Tensor(base * (u * u), requires_grad=True)
        resistant_logit_sum(model, row, embeddings=emb).backward()
        grads[u] = (2.0 * u) * emb.grad
        hvals[u] = float((base * grads[u]).sum())

    if steps == 1:
        eval_at(0.5)
        return (base * grads[0.5]).sum(axis=-1)

    m0 = 1
    while m0 * 2 <= max(1, steps // 8):
        m0 *= 2
    j0 = m0.bit_length()  # first ladder node at half the coarse spacing
    n_ladder = max(0, min((steps - (2 * (m0 + 1) - 1)) // 4, 13 - j0 + 1))
    nodes = sorted({k / m0 for k in range(m0 + 1)} | {2.0**-j for j in range(j0, j0 + n_ladder)})
    for u in nodes:
        eval_at(u)
    budget = steps - len(nodes)

    def panel(a: float, b: float) -> float:
        """Scalar Simpson value of a measured panel, for error estimates."""
        mid = (a + b) / 2
        return (b - a) * (hvals[a] + 4.0 * hvals[mid] + hvals[b]) / 6.0

    flat: list[tuple[float, float]] = []  # no midpoint: plain trapezoid
    heap: list[tuple[float, float, float]] = []
    for a, b in zip(nodes, nodes[1:]):
        if budget > 0:
            # seed priority: a scaled total-variation bound rather than a
            # curvature estimate, so structure whose midpoint happens to
            # land on the chord cannot alias itself out of refinement
            mid = (a + b) / 2
            eval_at(mid)
            err = (abs(hvals[mid] - hvals[a]) + abs(hvals[b] - hvals[mid])) * (b - a) * 0.5
            heapq.heappush(heap, (-err, a, b))
            budget -= 1
        else:
            flat.append((a, b))
    while budget >= 2 and heap:
        _, a, b = heapq.heappop(heap)
        mid = (a + b) / 2
        eval_at((a + mid) / 2)
        eval_at((mid + b) / 2)
        budget -= 2
        # measured Simpson discrepancy of this split: panels that refined
        # cleanly sink in the heap, panels hiding structure stay hot
        disc = 0.5 * abs(panel(a, mid) + panel(mid, b) - panel(a, b))
        heapq.heappush(heap, (-disc, a, mid))
        heapq.heappush(heap, (-disc, mid, b))
    acc = np.zeros_like(base)
    for a, b in flat:
        acc += ((b - a) * 0.5) * (grads[a] + grads[b])
    panels = sorted((a, b) for _, a, b in heap)
    k = 0
    while k < len(panels):
        a, b = panels[k]
        # adjacent equal-width panels hold five uniform nodes: integrate
        # the pair at sixth order, two grades above the lone-panel rule
        if k + 1 < len(panels):
            a2, b2 = panels[k + 1]
            if a2 == b and (b2 - a2) == (b - a):
                w = b2 - a
                f0, f1, f2 = grads[a], grads[(a + b) / 2], grads[b]
                f3, f4 = grads[(a2 + b2) / 2], grads[b2]
                acc += (w / 90.0) * (
                    7.0 * f0 + 32.0 * f1 + 12.0 * f2 + 32.0 * f3 + 7.0 * f4
                )
                k += 2
                continue
        mid = (a + b) / 2
        acc += ((b - a) * 0.25) * (grads[a] + 2.0 * grads[mid] + grads[b])
        acc += ((b - a) / 12.0) * (2.0 * grads[mid] - grads[a] - grads[b])
        k += 1
    return (base * acc).sum(axis=-1)


def integrated_gradients(model: VampNet, batch: PaddedBatch, steps: int = 20) -> np.ndarray:
    """Per-variant attribution of the resistant logit, shape [B, L].

    Integrates the logit gradient along the straight path from the zero
    embedding to the sample embedding, holding quality features fixed.
    `steps` is the gradient-evaluation budget per sample; each sample
    refines its own quadrature mesh independently, so attributions never
    depend on how samples are batched together.
    """
    if steps < 1:
        raise ConfigError(f"integration steps must be >= 1, got {steps}")
    base = model.embed_tokens(batch)
    attr = np.zeros(batch.mask.shape)
    for i in range(batch.mask.shape[0]):
        attr[i] = _adaptive_attr_row(model, _batch_row(batch, i), base[i : i + 1], steps)[0]
    return attr * batch.mask


def ig_completeness(model: VampNet, batch: PaddedBatch, steps: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Returns (sum of attributions, logit delta from baseline) per sample."""
    attr_sums = integrated_gradients(model, batch, steps).sum(axis=1)
    base = model.embed_tokens(batch)
    f_x = resistant_logits(model, batch, embeddings=Tensor(base))
    f_0 = resistant_logits(model, batch, embeddings=Tensor(np.zeros_like(base)))
    return attr_sums, f_x - f_0


# -- aggregation over a cohort ------------------------------------------------


@dataclass
class AttributionRow:
    variant: str
    mean_score: float
    abs_rank: int
    n_samples: int


def aggregate_attributions(
    model: VampNet,
    samples: Sequence[SampleRecord],
    vocab: Vocabulary,
    l_max: int,
    steps: int = 20,
    batch_size: int = 64,
) -> list[AttributionRow]:
    """Mean IG score per variant over the samples where it occurs,
    ranked by absolute mean (rank 1 = largest)."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo : lo + batch_size]
        batch = collate(chunk, vocab, l_max)
        attr = integrated_gradients(model, batch, steps)
        for r, rec in enumerate(chunk):
            for p, tok in enumerate(rec.tokens[:l_max]):
                sums[tok] = sums.get(tok, 0.0) + float(attr[r, p])
                counts[tok] = counts.get(tok, 0) + 1
    means = {t: sums[t] / counts[t] for t in sums}
    order = sorted(means, key=lambda t: (-abs(means[t]), t))
    return [
        AttributionRow(variant=t, mean_score=means[t], abs_rank=i + 1, n_samples=counts[t])
        for i, t in enumerate(order)
    ]


def write_attributions_csv(path: str | Path, rows: Sequence[AttributionRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mean_score", "abs_rank", "n_samples"])
        for r in rows:
            writer.writerow([r.variant, repr(r.mean_score), r.abs_rank, r.n_samples])


# -- channel ablation ----------------------------------------------------------


def _scores_with_channels_zeroed(model: VampNet, batch: PaddedBatch, indices: Sequence[int]) -> np.ndarray:
    feats = batch.features.copy()
    feats[:, :, list(indices)] = 0.0
    return model.scores(dataclasses.replace(batch, features=feats))


def ablate_channels(model: VampNet, batch: PaddedBatch, channels: Sequence[str]) -> tuple[float, float]:
    """(AUC drop, F1 drop) from zeroing the named channels on the model input."""
    indices = []
    for name in channels:
        if name not in CHANNEL_INDEX:
            raise ConfigError(f"unknown feature channel {name!r}")
        indices.append(CHANNEL_INDEX[name])
    base = evaluate(model.scores(batch), batch.labels)
    if base.auc is None:
        raise ContractError("channel ablation needs a two-class batch")
    ablated = evaluate(_scores_with_channels_zeroed(model, batch, indices), batch.labels)
    return base.auc - ablated.auc, base.f1 - ablated.f1


def ablate_channel(model: VampNet, batch: PaddedBatch, channel: str) -> tuple[float, float]:
    return ablate_channels(model, batch, [channel])


def ablation_report(model: VampNet, batch: PaddedBatch) -> list[tuple[str, float, float]]:
    return [(name, *ablate_channel(model, batch, name)) for name in CHANNEL_NAMES]


def write_ablation_csv(path: str | Path, rows: Sequence[tuple[str, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "auc_drop", "f1_drop"])
        for name, auc_drop, f1_drop in rows:
            writer.writerow([name, repr(auc_drop), repr(f1_drop)])


# -- attention interaction networks ---------------------------------------------


@dataclass
class InteractionMatrix:
    tokens: list[str]  # canonical genome-position order
    strengths: np.ndarray  # symmetric, zero diagonal

    @property
    def empty(self) -> bool:
        return len(self.tokens) == 0


def extract_interactions(
    model: VampNet,
    samples: Sequence[SampleRecord],
    vocab: Vocabulary,
    l_max: int,
    min_occurrence: int = 10,
    batch_size: int = 64,
    layer: int = 0,
) -> InteractionMatrix:
    """Aggregated head-averaged attention between co-occurring variants.

    strength(u, v) in one sample is (A[u,v] + A[v,u]) / 2; the matrix
    entry is the mean over samples where both variants occur, restricted
    to variants seen in at least min_occurrence samples.
    """
    pair_sums: dict[tuple[str, str], float] = {}
    pair_counts: dict[tuple[str, str], int] = {}
    occurrence: dict[str, int] = {}
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo : lo + batch_size]
        batch = collate(chunk, vocab, l_max)
        _, extras = model.forward(batch, train=False, collect_attention=True)
        attn = extras["attention"][layer]  # head-averaged [B, L, L]
        for r, rec in enumerate(chunk):
            toks = rec.tokens[:l_max]
            for t in toks:
                occurrence[t] = occurrence.get(t, 0) + 1
            for i in range(len(toks)):
                for j in range(i + 1, len(toks)):
                    u, v = toks[i], toks[j]
                    key = (u, v) if u <= v else (v, u)
                    strength = 0.5 * (attn[r, i, j] + attn[r, j, i])
                    pair_sums[key] = pair_sums.get(key, 0.0) + strength
                    pair_counts[key] = pair_counts.get(key, 0) + 1
    eligible = sorted((t for t, n in occurrence.items() if n >= min_occurrence), key=_position_key)
    index = {t: i for i, t in enumerate(eligible)}
    mat = np.zeros((len(eligible), len(eligible)))
    filled = 0
    for (u, v), total in pair_sums.items():
        if u in index and v in index:
            value = total / pair_counts[(u, v)]
            mat[index[u], index[v]] = value
            mat[index[v], index[u]] = value
            filled += 1
    if filled == 0:
        warnings.warn("no co-occurring variant pairs above the occurrence threshold")
        return InteractionMatrix(tokens=[], strengths=np.zeros((0, 0)))
    return InteractionMatrix(tokens=eligible, strengths=mat)


def write_interactions_tsv(path: str | Path, matrix: InteractionMatrix) -> None:
    with open(path, "w") as fh:
        fh.write("token\t" + "\t".join(matrix.tokens) + "\n")
        for i, tok in enumerate(matrix.tokens):
            row = "\t".join(repr(v) for v in matrix.strengths[i].tolist())
            fh.write(f"{tok}\t{row}\n")


def read_interactions_tsv(path: str | Path) -> InteractionMatrix:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        tokens = header[1:]
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            rows.append([float(v) for v in parts[1:]])
    return InteractionMatrix(tokens=tokens, strengths=np.array(rows).reshape(len(tokens), len(tokens)))


def detect_hubs(matrix: InteractionMatrix, top_k: int) -> list[tuple[str, float]]:
    """Variants by weighted degree (row sum, diagonal excluded); ties break
    toward the lexicographically smaller token."""
    if matrix.empty:
        raise ContractError("hub detection needs a nonempty interaction matrix")
    degrees = matrix.strengths.sum(axis=1) - np.diag(matrix.strengths)
    order = sorted(range(len(matrix.tokens)), key=lambda i: (-degrees[i], matrix.tokens[i]))
    return [(matrix.tokens[i], float(degrees[i])) for i in order[:top_k]]


# -- community detection ----------------------------------------------------------


@dataclass
class CommunityPartition:
    tokens: list[str]
    membership: dict[str, int]
    communities: list[list[str]]
    q: float


def modularity_q(adj: np.ndarray, groups: Sequence[Sequence[int]]) -> float:
    """Weighted modularity of a node partition over a symmetric adjacency."""
    m2 = adj.sum()
    if m2 == 0.0:
        return 0.0
    deg = adj.sum(axis=1)
    q = 0.0
    for group in groups:
        idx = np.asarray(list(group), dtype=int)
        q += adj[np.ix_(idx, idx)].sum() / m2 - (deg[idx].sum() / m2) ** 2
    return float(q)


def _merge_partition(adj: np.ndarray) -> list[list[int]]:
    """Agglomerative phase: repeatedly apply the merge with the largest
    positive modularity gain; ties break toward the smallest community
    index pair (argmax scans row-major)."""
    n = adj.shape[0]
    m2 = adj.sum()
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    weight = adj.copy()  # community-to-community edge weight
    deg = adj.sum(axis=1)
    active = np.ones(n, dtype=bool)
    while active.sum() > 1:
        gain = 2.0 * (weight / m2 - np.outer(deg, deg) / (m2 * m2))
        dead = ~active
        gain[dead, :] = -np.inf
        gain[:, dead] = -np.inf
        gain[np.tril_indices(n)] = -np.inf
        flat = int(np.argmax(gain))
        a, b = divmod(flat, n)
        if gain[a, b] <= 0.0:
            break
        weight[a, :] += weight[b, :]
        weight[:, a] += weight[:, b]
        deg[a] += deg[b]
        members[a].extend(members[b])
        del members[b]
        active[b] = False
    return [sorted(members[c]) for c in sorted(members)]


def _exact_partition(adj: np.ndarray) -> list[list[int]]:
    """Exact max-Q partition by dynamic programming over node subsets;
    affordable only for small graphs (3^n subset splits)."""
    n = adj.shape[0]
    m2 = adj.sum()
    size = 1 << n
    cross = np.zeros((n, size))  # cross[v][mask] = sum of adj[v, j] for j in mask
    for mask in range(1, size):
        low = mask & -mask
        rest = mask ^ low
        j = low.bit_length() - 1
        for v in range(n):
            cross[v][mask] = cross[v][rest] + adj[v, j]
    w_in = np.zeros(size)
    deg_sum = np.zeros(size)
    deg = adj.sum(axis=1)
    for mask in range(1, size):
        low = mask & -mask
        rest = mask ^ low
        v = low.bit_length() - 1
        w_in[mask] = w_in[rest] + 2.0 * cross[v][rest]
        deg_sum[mask] = deg_sum[rest] + deg[v]
    score = w_in / m2 - (deg_sum / m2) ** 2

    best = np.full(size, -np.inf)
    choice = np.zeros(size, dtype=int)
    best[0] = 0.0
    for mask in range(1, size):
        low = mask & -mask
        sub = mask
        while sub:
            if sub & low:
                total = score[sub] + best[mask ^ sub]
                if total > best[mask]:
                    best[mask] = total
                    choice[mask] = sub
            sub = (sub - 1) & mask
    groups = []
    mask = size - 1
    while mask:
        sub = int(choice[mask])
        groups.append([i for i in range(n) if sub >> i & 1])
        mask ^= sub
    return sorted(groups)


def greedy_modularity(
    matrix: InteractionMatrix,
    edge_threshold: float | None = None,
    exact_limit: int = 12,
) -> CommunityPartition:
    """Max-modularity communities of the thresholded interaction graph.

    Graphs of at most exact_limit nodes are solved exactly by subset
    dynamic programming, since greedy merging alone demonstrably stalls
    in local optima on small graphs.  Larger graphs fall back to the
    scalable agglomerative merge phase.
    """
    n = len(matrix.tokens)
    if edge_threshold is None:
        nonzero = matrix.strengths[matrix.strengths > 0.0]
        edge_threshold = float(np.percentile(nonzero, 75.0)) if nonzero.size else 0.0
    adj = np.where(matrix.strengths >= edge_threshold, matrix.strengths, 0.0)
    if adj.size:
        np.fill_diagonal(adj, 0.0)

    if adj.sum() == 0.0:
        groups = [[i] for i in range(n)]
    elif n <= exact_limit:
        groups = _exact_partition(adj)
    else:
        groups = _merge_partition(adj)

    communities = [[matrix.tokens[i] for i in g] for g in groups]
    membership = {tok: cid for cid, toks in enumerate(communities) for tok in toks}
    return CommunityPartition(
        tokens=list(matrix.tokens),
        membership=membership,
        communities=communities,
        q=modularity_q(adj, groups),
    )


def write_communities_csv(path: str | Path, partition: CommunityPartition) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "community_id"])
        for tok in partition.tokens:
            writer.writerow([tok, partition.membership[tok]])
        fh.write(f"Q={repr(partition.q)}\n")


# -- gradient saliency (diagnostic only) -----------------------------------------


def saliency_by_channel(model: VampNet, batch: PaddedBatch) -> dict[str, float]:
    """Mean |d logit_resistant / d channel input| over valid positions."""
    feats = Tensor(batch.features.copy(), requires_grad=True)
    resistant_logit_sum(model, batch, features=feats).backward()
    mag = np.abs(feats.grad) * batch.mask[:, :, None]
    denom = max(batch.mask.sum(), 1.0)
    per_channel = mag.sum(axis=(0, 1)) / denom
    return {name: float(per_channel[i]) for i, name in enumerate(CHANNEL_NAMES)}
