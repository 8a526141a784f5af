"""Deterministic parameter initialization given a seeded generator."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def linear(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
    w = Tensor(xavier_uniform(rng, n_in, n_out, (n_in, n_out)), requires_grad=True)
    b = Tensor(np.zeros(n_out), requires_grad=True)
    return w, b


def conv_kernel(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> tuple[Tensor, Tensor]:
    w = Tensor(xavier_uniform(rng, c_in * k, c_out * k, (c_out, c_in, k)), requires_grad=True)
    b = Tensor(np.zeros(c_out), requires_grad=True)
    return w, b


def embedding(rng: np.random.Generator, n_rows: int, d: int) -> Tensor:
    table = rng.normal(0.0, 0.1, size=(n_rows, d))
    table[0] = 0.0  # PAD row stays all-zero for the whole life of the model
    return Tensor(table, requires_grad=True)


def layer_norm_params(d: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.ones(d), requires_grad=True), Tensor(np.zeros(d), requires_grad=True)
