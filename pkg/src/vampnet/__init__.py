"""Variant-aware multi-path network for genotype-to-resistance prediction."""

import os

# VAMPNET_THREADS caps worker threads everywhere (default 1).  BLAS pools
# are sized at import time, so this must run before numpy is first loaded;
# explicit user-set BLAS variables win.
_n = os.environ.get("VAMPNET_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _n)


def thread_count() -> int:
    """Worker-thread budget for parallel sections (VAMPNET_THREADS, default 1)."""
    try:
        n = int(os.environ.get("VAMPNET_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


__version__ = "0.1.0"
