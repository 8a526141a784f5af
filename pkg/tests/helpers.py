"""Shared numeric test utilities, independent of the package internals."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# tolerance contract for every gradient check in the suite
FD_STEP = 1e-5
FD_REL_TOL = 1e-4
FD_ABS_FLOOR = 1e-8


def fd_grad(f: Callable[[], float], arrays: Sequence[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central-difference gradient of scalar f() wrt each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, label: str = "") -> None:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape, f"{label}: shape {analytic.shape} vs {numeric.shape}"
    diff = np.abs(analytic - numeric)
    bound = np.maximum(FD_REL_TOL * np.maximum(np.abs(analytic), np.abs(numeric)), FD_ABS_FLOOR)
    worst = (diff - bound).max()
    assert (diff <= bound).all(), f"{label}: gradient mismatch, worst excess {worst:.3e}"


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) reference AUC: fraction of correctly ordered pairs, ties count half."""
    pos = np.asarray(scores)[np.asarray(labels) == 1]
    neg = np.asarray(scores)[np.asarray(labels) == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC undefined for a single-class set")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))
