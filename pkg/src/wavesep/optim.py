"""Adam optimizer over named parameter tensors.

Standard bias-corrected Adam:
    m <- b1*m + (1-b1)*g          mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2        vhat = v / (1 - b2^t)
    p <- p - lr * mhat / (sqrt(vhat) + eps)
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers under ``opt.m.`` / ``opt.v.`` prefixes, for checkpoints."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params.items():
            m = arrays.get(f"opt.m.{name}")
            v = arrays.get(f"opt.v.{name}")
            if m is None or v is None:
                raise ShapeError(f"optimizer state missing moments for {name!r}")
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ShapeError(f"optimizer state shape mismatch for {name!r}")
            self.m[name] = np.array(m, dtype=p.data.dtype)
            self.v[name] = np.array(v, dtype=p.data.dtype)
        self.step_count = int(step_count)
