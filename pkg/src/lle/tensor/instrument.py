"""Op-call counters used to assert single-pass inference and timed sections."""
from __future__ import annotations

import contextvars
from collections import Counter

_counters: contextvars.ContextVar[tuple["OpCounter", ...]] = contextvars.ContextVar(
    "lle_op_counters", default=()
)


class OpCounter:
    """Counts op invocations (and named events) while active.

    >>> with OpCounter() as c:
    ...     tick("conv2d")
    >>> c["conv2d"]
    1
    """

    def __init__(self):
        self.counts: Counter[str] = Counter()
        self._token = None

    def __enter__(self) -> "OpCounter":
        self._token = _counters.set(_counters.get() + (self,))
        return self

    def __exit__(self, *exc) -> None:
        _counters.reset(self._token)

    def __getitem__(self, key: str) -> int:
        return self.counts[key]


def tick(name: str) -> None:
    for counter in _counters.get():
        counter.counts[name] += 1
