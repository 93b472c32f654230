"""Seeded, portable random source.

Backed by numpy's PCG64 bit generator, whose integer state transition and
distribution samplers are platform independent for a fixed numpy release.
"""
from __future__ import annotations

import numpy as np

from .core import DTYPE

ALGORITHM = "PCG64"


class Rng:
    """PCG64 stream. ``key`` derives an independent substream (e.g. per step)."""

    def __init__(self, seed: int, *key: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *self.key])))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return (self._gen.standard_normal(size=shape, dtype=np.float32) * DTYPE(std)).astype(DTYPE)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "algorithm": ALGORITHM,
            "seed": self.seed,
            "key": list(self.key),
            "state": int(st["state"]["state"]),
            "inc": int(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        if state.get("algorithm") != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {state.get('algorithm')!r}")
        rng = cls(state["seed"], *state.get("key", ()))
        rng._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(state["state"]), "inc": int(state["inc"])},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }
        return rng
