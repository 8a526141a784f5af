"""Full two-path network: configuration and assembly."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cnn import Path2Cnn
from .cohort import N_CHANNELS
from .errors import ConfigError
from .fusion import FUSION_MODES, ClassifierHead, fuse
from .sab import Path1Sab
from .tokens import STATIC, SUBWORD, PaddedBatch


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    ff_hidden: int = 32
    dropout: float = 0.1
    activation: str = "relu"
    masked: bool = True
    use_path2: bool = True
    fusion: str = "amplification"
    conv_layers: int = 3
    conv_kernel: int = 3
    conv_width: int = 16
    encoding: str = STATIC

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must cover PAD and UNK, got {self.vocab_size}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}")
        if self.encoding not in (STATIC, SUBWORD):
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            if f.type == "int":
                value = int(value)
            elif f.type == "float":
                value = float(value)
            elif f.type == "bool":
                value = value in (True, "True", "true", "1")
            kwargs[f.name] = value
        return cls(**kwargs)


class VampNet:
    """Set-attention path plus quality-CNN path behind a gated head."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.path1 = Path1Sab(
            rng,
            vocab_size=cfg.vocab_size,
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            ff_hidden=cfg.ff_hidden,
            activation=cfg.activation,
            dropout=cfg.dropout,
            masked=cfg.masked,
            encoding=cfg.encoding,
        )
        self.path2 = None
        if cfg.use_path2:
            self.path2 = Path2Cnn(
                rng,
                n_channels_in=N_CHANNELS,
                conv_channels=[cfg.conv_width] * cfg.conv_layers,
                kernel=cfg.conv_kernel,
                d_model=cfg.d_model,
                activation=cfg.activation,
                dropout=cfg.dropout,
                masked=cfg.masked,
            )
        in_dim = 2 * cfg.d_model if (cfg.use_path2 and cfg.fusion == "concat") else cfg.d_model
        self.head = ClassifierHead(rng, in_dim, cfg.d_model, cfg.activation, cfg.dropout)

    def parameters(self) -> dict[str, Tensor]:
        out = self.path1.params("path1")
        if self.path2 is not None:
            out.update(self.path2.params("path2"))
        out.update(self.head.params("head"))
        return out

    def zero_pad_grad(self) -> None:
        self.path1.zero_pad_grad()

    def forward(
        self,
        batch: PaddedBatch,
        train: bool = False,
        rng: np.random.Generator | None = None,
        collect_attention: bool = False,
        embeddings: Tensor | None = None,
        features: Tensor | None = None,
    ) -> tuple[Tensor, dict]:
        z_sab, attention = self.path1.forward(batch, train, rng, collect_attention, embeddings)
        if self.path2 is not None:
            z_cnn = self.path2.forward(batch, train, rng, features)
            z = fuse(z_sab, z_cnn, self.cfg.fusion)
        else:
            z = z_sab
        logits = self.head.forward(z, train, rng)
        return logits, {"attention": attention}

    def scores(self, batch: PaddedBatch) -> np.ndarray:
        """Resistant-class probability per sample, eval mode."""
        logits, _ = self.forward(batch, train=False)
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e[:, 1] / e.sum(axis=-1)

    def embed_tokens(self, batch: PaddedBatch) -> np.ndarray:
        """Token embeddings as plain data, for attribution baselines."""
        return self.path1.embed(batch).data
