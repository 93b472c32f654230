"""Caps on op-internal (BLAS) parallelism.

``LLE_THREADS`` sets the cap; 0 or unset means single-threaded.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

ENV_VAR = "LLE_THREADS"


def threads_from_env(default: int = 0) -> int:
    raw = os.environ.get(ENV_VAR, "").strip()
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{ENV_VAR} must be a non-negative integer, got {n}")
    return n


@contextmanager
def thread_limit(n: int | None = None):
    """Limit BLAS threads to ``max(1, n)``; ``None`` reads the environment."""
    if n is None:
        n = threads_from_env()
    with threadpool_limits(limits=max(1, int(n))):
        yield max(1, int(n))
