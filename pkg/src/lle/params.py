"""Ordered, named collections of learnable tensors."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import DTYPE, Rng, Tensor


class ParamSet:
    """Named tensors in a fixed insertion order.

    The order is part of the checkpoint contract: it is the order in which
    tensors are created by the model builders and never changes for a
    given config.
    """

    def __init__(self):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = [k for k in self._tensors if k not in arrays]
        if missing:
            raise KeyError(f"missing parameters: {', '.join(missing[:5])}")
        for k, t in self._tensors.items():
            a = np.asarray(arrays[k], dtype=DTYPE)
            if a.shape != t.shape:
                raise ValueError(f"parameter {k}: shape {a.shape} does not match {t.shape}")
            t.data = a.copy()

    def check_finite(self) -> None:
        for t in self._tensors.values():
            t.check_finite()


def he_normal(rng: Rng, shape, fan_in: int) -> np.ndarray:
    return rng.normal(shape, std=math.sqrt(2.0 / fan_in))


def add_conv(ps: ParamSet, rng: Rng, name: str, c_in: int, c_out: int, k: int, bias: bool = True) -> None:
    ps.add(f"{name}.w", he_normal(rng, (c_out, c_in, k, k), c_in * k * k))
    if bias:
        ps.add(f"{name}.b", np.zeros(c_out, DTYPE))
