"""Set attention path: permutation-equivariant encoder over variant sets.

Padding is handled twice on purpose: a -1e9 additive penalty before the
softmax and an explicit multiplicative zero afterwards, which makes the
padding-independence guarantee exact instead of merely overwhelming.
Rows whose keys are all padded come out as zero weights, never NaN.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .init import embedding, layer_norm_params, linear
from .tokens import STATIC, PaddedBatch

MASK_PENALTY = 1e9


class SabLayer:
    """One multi-head self-attention block with post-residual layer norm."""

    def __init__(self, rng, d_model: int, n_heads: int, ff_hidden: int, activation: str, dropout: float):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} is not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.dropout = dropout
        self.act = ad.activation_fn(activation)
        self.wq, self.bq = linear(rng, d_model, d_model)
        self.wk, self.bk = linear(rng, d_model, d_model)
        self.wv, self.bv = linear(rng, d_model, d_model)
        self.wo, self.bo = linear(rng, d_model, d_model)
        self.ln1_g, self.ln1_b = layer_norm_params(d_model)
        self.w1, self.b1 = linear(rng, d_model, ff_hidden)
        self.w2, self.b2 = linear(rng, ff_hidden, d_model)
        self.ln2_g, self.ln2_b = layer_norm_params(d_model)

    def params(self, prefix: str) -> dict[str, Tensor]:
        names = (
            "wq bq wk bk wv bv wo bo ln1_g ln1_b w1 b1 w2 b2 ln2_g ln2_b"
        ).split()
        return {f"{prefix}/{n}": getattr(self, n) for n in names}

    def _heads(self, x: Tensor, B: int, L: int) -> Tensor:
        return ad.permute(ad.reshape(x, (B, L, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def forward(
        self,
        x: Tensor,
        key_mask: np.ndarray | None,
        train: bool = False,
        rng: np.random.Generator | None = None,
        collect: bool = False,
    ) -> tuple[Tensor, np.ndarray | None]:
        B, L, D = x.shape
        q = self._heads(ad.add(ad.matmul(x, self.wq), self.bq), B, L)
        k = self._heads(ad.add(ad.matmul(x, self.wk), self.bk), B, L)
        v = self._heads(ad.add(ad.matmul(x, self.wv), self.bv), B, L)
        scores = ad.mul(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(self.d_head))
        if key_mask is not None:
            key_valid = np.ascontiguousarray(
                np.broadcast_to(key_mask[:, None, None, :], (B, self.n_heads, L, L))
            )
            scores = ad.add(scores, ad.constant(np.where(key_valid, 0.0, -MASK_PENALTY)))
        weights = ad.softmax_rows(scores)
        if key_mask is not None:
            weights = ad.mul(weights, ad.constant(key_valid.astype(np.float64)))
        ctx = ad.matmul(weights, v)
        ctx = ad.reshape(ad.permute(ctx, (0, 2, 1, 3)), (B, L, D))
        out = ad.add(ad.matmul(ctx, self.wo), self.bo)
        if key_mask is not None:
            query_valid = np.ascontiguousarray(np.broadcast_to(key_mask[:, :, None], (B, L, D)))
            out = ad.mul(out, ad.constant(query_valid.astype(np.float64)))
        out = ad.dropout(out, self.dropout, train, rng)
        h = ad.layer_norm(ad.add(x, out), self.ln1_g, self.ln1_b)
        ff = self.act(ad.add(ad.matmul(h, self.w1), self.b1))
        ff = ad.add(ad.matmul(ff, self.w2), self.b2)
        ff = ad.dropout(ff, self.dropout, train, rng)
        h = ad.layer_norm(ad.add(h, ff), self.ln2_g, self.ln2_b)
        attn = weights.data.mean(axis=1) if collect else None  # head-averaged [B, L, L]
        return h, attn


class Path1Sab:
    """Embedding, a stack of SAB layers, and masked mean pooling."""

    def __init__(
        self,
        rng,
        vocab_size: int,
        d_model: int,
        n_heads: int,
        n_layers: int,
        ff_hidden: int,
        activation: str,
        dropout: float,
        masked: bool,
        encoding: str = STATIC,
    ):
        if n_layers < 1:
            raise ConfigError(f"need at least one attention layer, got {n_layers}")
        self.masked = masked
        self.encoding = encoding
        self.embedding = embedding(rng, vocab_size, d_model)
        self.layers = [
            SabLayer(rng, d_model, n_heads, ff_hidden, activation, dropout) for _ in range(n_layers)
        ]

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}/layer{i}"))
        return out

    def zero_pad_grad(self) -> None:
        # keeps the PAD embedding row frozen at zero across optimizer steps
        if self.embedding.grad is not None:
            self.embedding.grad[0] = 0.0

    def embed(self, batch: PaddedBatch) -> Tensor:
        if batch.piece_flat is None:
            return ad.take_rows(self.embedding, batch.token_ids)
        table = ad.bag_mean_rows(self.embedding, batch.piece_flat, batch.piece_offsets)
        return ad.take_rows(table, batch.token_ids)

    def forward(
        self,
        batch: PaddedBatch,
        train: bool = False,
        rng: np.random.Generator | None = None,
        collect_attention: bool = False,
        embeddings: Tensor | None = None,
    ) -> tuple[Tensor, list[np.ndarray]]:
        x = embeddings if embeddings is not None else self.embed(batch)
        key_mask = batch.mask if self.masked else None
        maps: list[np.ndarray] = []
        for layer in self.layers:
            x, attn = layer.forward(x, key_mask, train, rng, collect_attention)
            if collect_attention:
                maps.append(attn)
        if self.masked:
            pooled = ad.masked_mean_rows(x, batch.mask)
        else:
            pooled = ad.mean_over_axis(x, 1)
        return pooled, maps
