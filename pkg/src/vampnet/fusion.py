"""Gated fusion of the two path summaries and the classifier head.

The quality path drives the gate g = sigmoid(z_cnn); the set path
carries the evidence being gated.  Mode value ranges:

  suppression    g*z            gate in (0, 1)
  amplification  (1+g)*z        gate in (1, 2), never erases evidence
  adaptive       (2g-1)*z       gate in (-1, 1), can flip sign
  concat         [z_sab; z_cnn] no gate, doubles the head input
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .init import linear

FUSION_MODES = ("concat", "suppression", "amplification", "adaptive")


def fuse(z_sab: Tensor, z_cnn: Tensor, mode: str) -> Tensor:
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}; choose from {list(FUSION_MODES)}")
    if mode == "concat":
        return ad.concat_last(z_sab, z_cnn)
    g = ad.sigmoid(z_cnn)
    if mode == "suppression":
        return ad.mul(g, z_sab)
    if mode == "amplification":
        return ad.mul(ad.add(g, 1.0), z_sab)
    return ad.mul(ad.add(ad.mul(g, 2.0), -1.0), z_sab)  # adaptive


class ClassifierHead:
    """Two hidden layers sized [d_model, d_model // 2], then 2 logits."""

    def __init__(self, rng, in_dim: int, d_model: int, activation: str, dropout: float):
        self.dropout = dropout
        self.act = ad.activation_fn(activation)
        dims = [in_dim, d_model, max(d_model // 2, 1), 2]
        self.layers = [linear(rng, dims[i], dims[i + 1]) for i in range(3)]

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}/fc{i}/w"] = w
            out[f"{prefix}/fc{i}/b"] = b
        return out

    def forward(self, z: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        for i, (w, b) in enumerate(self.layers):
            z = ad.add(ad.matmul(z, w), b)
            if i < len(self.layers) - 1:
                z = self.act(z)
                z = ad.dropout(z, self.dropout, train, rng)
        return z
