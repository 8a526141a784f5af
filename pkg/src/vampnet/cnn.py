"""Quality path: 1-D convolutions over the per-variant channel matrix.

The token axis is treated as an unordered sequence; padded positions are
re-zeroed after every convolution so that bias terms cannot leak pad
activations into the masked mean, keeping the path padding-independent.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .init import conv_kernel, linear
from .tokens import PaddedBatch


def same_padding(kernel: int) -> tuple[int, int]:
    """Zero padding that preserves length at stride 1; even kernels pad
    one extra on the right."""
    total = kernel - 1
    return total // 2, total - total // 2


class Path2Cnn:
    def __init__(
        self,
        rng,
        n_channels_in: int,
        conv_channels: list[int],
        kernel: int,
        d_model: int,
        activation: str,
        dropout: float,
        masked: bool = True,
    ):
        if not conv_channels:
            raise ConfigError("need at least one convolution layer")
        if kernel < 1:
            raise ConfigError(f"conv kernel must be >= 1, got {kernel}")
        self.kernel = kernel
        self.dropout = dropout
        self.masked = masked
        self.act = ad.activation_fn(activation)
        self.convs = []
        c_in = n_channels_in
        for c_out in conv_channels:
            self.convs.append(conv_kernel(rng, c_out, c_in, kernel))
            c_in = c_out
        self.wp, self.bp = linear(rng, c_in, d_model)
        # zero-init the projection: a fresh gate is exactly neutral, so the
        # untrained full model inherits Path-1's permutation invariance and
        # the fusion branch ramps up smoothly once training starts
        self.wp.data[:] = 0.0

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"{prefix}/conv{i}/w"] = w
            out[f"{prefix}/conv{i}/b"] = b
        out[f"{prefix}/proj/w"] = self.wp
        out[f"{prefix}/proj/b"] = self.bp
        return out

    def forward(
        self,
        batch: PaddedBatch,
        train: bool = False,
        rng: np.random.Generator | None = None,
        features: Tensor | None = None,
    ) -> Tensor:
        B, L = batch.mask.shape
        src = features if features is not None else ad.constant(batch.features)
        x = ad.permute(src, (0, 2, 1))  # [B, 8, L]
        pad = same_padding(self.kernel)
        for w, b in self.convs:
            x = ad.conv1d(x, w, b, stride=1, padding=pad)
            x = self.act(x)
            x = ad.dropout(x, self.dropout, train, rng)
            if self.masked:
                valid = np.ascontiguousarray(
                    np.broadcast_to(batch.mask[:, None, :], x.shape)
                ).astype(np.float64)
                x = ad.mul(x, ad.constant(valid))
        x = ad.permute(x, (0, 2, 1))  # [B, L, C]
        if self.masked:
            pooled = ad.masked_mean_rows(x, batch.mask)
        else:
            pooled = ad.mean_over_axis(x, 1)
        return ad.add(ad.matmul(pooled, self.wp), self.bp)
