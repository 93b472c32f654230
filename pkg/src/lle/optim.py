"""Adam with bias correction, operating in place on a ParamSet's float32 data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet
from .tensor import DTYPE, NonFiniteError


@dataclass
class AdamState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")

    @classmethod
    def for_params(cls, params: ParamSet, **hyper) -> "AdamState":
        st = cls(**hyper)
        for name, p in params.items():
            st.m[name] = np.zeros(p.shape, DTYPE)
            st.v[name] = np.zeros(p.shape, DTYPE)
        return st

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One bias-corrected Adam update from each parameter's ``.grad``.

    A missing gradient counts as zero. Every gradient is checked before any
    parameter is touched, so a NaN aborts the whole step.
    """
    grads = {}
    for name, p in params.items():
        if name not in state.m:
            raise KeyError(f"optimizer has no moments for parameter {name!r}")
        g = p.grad
        if g is None:
            g = np.zeros(p.shape, DTYPE)
        elif g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter {name!r}; step aborted")
        grads[name] = g

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = DTYPE(b1) * state.m[name] + DTYPE(1 - b1) * g
        v = state.v[name] = DTYPE(b2) * state.v[name] + DTYPE(1 - b2) * (g * g)
        if state.lr == 0:
            continue
        m_hat = m / DTYPE(c1)
        v_hat = v / DTYPE(c2)
        p.data = (p.data - DTYPE(state.lr) * m_hat / (np.sqrt(v_hat) + DTYPE(state.eps))).astype(DTYPE)
