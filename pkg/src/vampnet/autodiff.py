"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor wraps a C-contiguous float64 ndarray and records how it was
produced.  backward() on a scalar walks the graph once in reverse
topological order and accumulates gradients into every tensor that
requires them.  Each primitive defines its adjoint next to the forward
rule so the pair can be audited side by side.

Broadcasting for elementwise ops is suffix-only: a lower-rank operand
must match the trailing dimensions of the higher-rank one exactly and
is replicated across the leading dimensions.  Anything else raises a
DimensionError naming both shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ConfigError, ContractError, DimensionError, NumericError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _as_f64(data) -> Array:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[Array], tuple] | None = None,
    ):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient machinery --------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: Array | None = None) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the whole graph.

        self must be scalar unless an explicit seed of self's shape is
        given.
        """
        if seed is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar output or an explicit seed; got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        else:
            seed = _as_f64(seed)
            if seed.shape != self.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} does not match output shape {self.shape}"
                )

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, Array] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = _as_f64(pg)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) != 1 else shape[0])


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data: Array, parents: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


# -- elementwise with suffix broadcasting -------------------------------


def _check_suffix(a_shape: tuple, b_shape: tuple, op: str) -> None:
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    k = len(small)
    if k > 0 and big[len(big) - k :] != small:
        raise DimensionError(f"{op}: shapes {a_shape} and {b_shape} do not align on trailing dimensions")


def _reduce_to(g: Array, shape: tuple) -> Array:
    # sums out the leading dims that suffix broadcasting introduced
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = a.data + float(b)
        return _make(out, (a,), lambda g: (g,))
    _check_suffix(a.shape, b.shape, "add")
    out = a.data + b.data

    def backward(g: Array):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        return _make(a.data * s, (a,), lambda g: (g * s,))
    _check_suffix(a.shape, b.shape, "mul")
    out = a.data * b.data

    def backward(g: Array):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(out, (a, b), backward)


# -- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if a.ndim != b.ndim and min(a.ndim, b.ndim) != 2:
        raise DimensionError(f"matmul: batch ranks differ for {a.shape} and {b.shape}")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g: Array):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return _make(out, (a, b), backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward(g: Array):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _make(out, (x,), backward)


def transpose_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = np.ascontiguousarray(x.data.reshape(shape))
    old = x.shape

    def backward(g: Array):
        return (g.reshape(old),)

    return _make(out, (x,), backward)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last: leading dimensions differ for {a.shape} and {b.shape}")
    out = np.concatenate([a.data, b.data], axis=-1)
    na = a.shape[-1]

    def backward(g: Array):
        return g[..., :na], g[..., na:]

    return _make(out, (a, b), backward)


# -- reductions ----------------------------------------------------------


def sum_over_axis(x: Tensor, axis: int) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g: Array):
        return (np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis),)

    return _make(out, (x,), backward)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g: Array):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,)

    return _make(out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g: Array):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())

    def backward(g: Array):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(out, (x,), backward)


# -- nonlinearities ------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def backward(g: Array):
        return (g * mask,)

    return _make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def backward(g: Array):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    # exact erf form, not the tanh approximation
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g: Array):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), backward)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
}


def activation_fn(name: str) -> Callable[[Tensor], Tensor]:
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]


# -- softmax family ------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis.  Input must be finite."""
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_rows input contains NaN or Inf")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("log_softmax input contains NaN or Inf")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g: Array):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward)


# -- normalization -------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g: Array):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gamma, beta), backward)


# -- dropout -------------------------------------------------------------


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)  # inverted scaling keeps eval mode a no-op
    factor = keep * scale
    out = x.data * factor

    def backward(g: Array):
        return (g * factor,)

    return _make(out, (x,), backward)


# -- embedding-style gathers ----------------------------------------------


def take_rows(x: Tensor, ids: Array) -> Tensor:
    """Gather rows of a 2-D tensor: out[..., :] = x[ids[...], :]."""
    if x.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-D table, got {x.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise ContractError(f"take_rows: id out of range for table with {x.shape[0]} rows")
    out = x.data[ids]

    def backward(g: Array):
        gx = np.zeros_like(x.data)
        np.add.at(gx, ids.ravel(), g.reshape(-1, x.shape[1]))
        return (gx,)

    return _make(out, (x,), backward)


def bag_mean_rows(x: Tensor, flat_ids: Array, offsets: Array) -> Tensor:
    """Mean-pool variable-length row bags out of a 2-D table.

    Bag r covers flat_ids[offsets[r]:offsets[r+1]]; an empty bag yields
    a zero row.
    """
    if x.ndim != 2:
        raise DimensionError(f"bag_mean_rows expects a 2-D table, got {x.shape}")
    flat_ids = np.asarray(flat_ids, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if flat_ids.size and (flat_ids.min() < 0 or flat_ids.max() >= x.shape[0]):
        raise ContractError(f"bag_mean_rows: id out of range for table with {x.shape[0]} rows")
    n_bags = len(offsets) - 1
    lengths = np.diff(offsets)
    if n_bags < 0 or (lengths < 0).any() or offsets[0] != 0 or offsets[-1] != flat_ids.size:
        raise ContractError("bag_mean_rows: offsets are not a valid CSR layout")
    out = np.zeros((n_bags, x.shape[1]))
    safe = np.maximum(lengths, 1)
    bag_idx = np.repeat(np.arange(n_bags), lengths)
    np.add.at(out, bag_idx, x.data[flat_ids])
    out = out / safe[:, None]

    def backward(g: Array):
        gx = np.zeros_like(x.data)
        per_row = np.repeat(g / safe[:, None], lengths, axis=0)
        np.add.at(gx, flat_ids, per_row)
        return (gx,)

    return _make(out, (x,), backward)


def masked_mean_rows(x: Tensor, mask: Array) -> Tensor:
    """Mean over axis 1 of [B, L, D], counting only mask-true rows.

    A sample with no valid rows pools to the zero vector.
    """
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise DimensionError(f"masked_mean_rows: got x {x.shape}, mask {mask.shape}")
    m = np.asarray(mask, dtype=bool)
    counts = m.sum(axis=1)
    safe = np.maximum(counts, 1).astype(np.float64)
    out = (x.data * m[:, :, None]).sum(axis=1) / safe[:, None]

    def backward(g: Array):
        gx = (g / safe[:, None])[:, None, :] * m[:, :, None]
        return (gx,)

    return _make(out, (x,), backward)


# -- convolution stack ----------------------------------------------------


def _pad_pair(padding) -> tuple[int, int]:
    if isinstance(padding, tuple):
        pl, pr = padding
    else:
        pl = pr = int(padding)
    if pl < 0 or pr < 0:
        raise ConfigError(f"negative conv padding {padding}")
    return int(pl), int(pr)


def conv1d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | tuple[int, int] = 0,
) -> Tensor:
    """Cross-correlation over [B, C_in, L] with kernel [C_out, C_in, K]."""
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x [B,C,L] and w [O,C,K], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d: channel mismatch between x {x.shape} and w {w.shape}")
    if stride < 1:
        raise ConfigError(f"conv1d stride must be >= 1, got {stride}")
    pl, pr = _pad_pair(padding)
    B, C, L = x.shape
    O, _, K = w.shape
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"conv1d: bias {bias.shape} does not match {O} output channels")
    L_padded = L + pl + pr
    if K > L_padded:
        raise DimensionError(f"conv1d: kernel {K} exceeds padded length {L_padded} (x {x.shape})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]
    out = np.einsum("bclk,ock->bol", windows, w.data)
    if bias is not None:
        out = out + bias.data[:, None]
    L_out = out.shape[2]

    def backward(g: Array):
        gw = np.einsum("bol,bclk->ock", g, windows)
        gxp = np.zeros_like(xp)
        for k in range(K):
            tmp = np.einsum("bol,oc->bcl", g, w.data[:, :, k])
            gxp[:, :, k : k + stride * L_out : stride] += tmp
        gx = gxp[:, :, pl : pl + L]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    if bias is None:
        return _make(out, parents, lambda g: backward(g)[:2])
    return _make(out, parents, backward)


def maxpool1d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling over the last axis; remainder is dropped."""
    if x.ndim != 3:
        raise DimensionError(f"maxpool1d expects [B,C,L], got {x.shape}")
    if size < 1:
        raise ConfigError(f"maxpool1d size must be >= 1, got {size}")
    B, C, L = x.shape
    n = L // size
    if n == 0:
        raise DimensionError(f"maxpool1d: window {size} exceeds length {L}")
    win = x.data[:, :, : n * size].reshape(B, C, n, size)
    out = win.max(axis=-1)
    arg = win.argmax(axis=-1)  # first max wins on ties, keeps backward deterministic

    def backward(g: Array):
        gwin = np.zeros((B, C, n, size))
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : n * size] = gwin.reshape(B, C, n * size)
        return (gx,)

    return _make(out, (x,), backward)
