"""Small parameter containers shared by the network modules."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor

INIT_STD = 0.02


def normal_param(rng: np.random.Generator, shape, name: str,
                 std: float = INIT_STD, dtype=np.float32) -> Parameter:
    return Parameter(rng.normal(0.0, std, size=shape).astype(dtype), name)


class Linear:
    """Affine map ``x @ w + b`` with weight shape [in_dim, out_dim]."""

    def __init__(self, in_dim: int, out_dim: int, name: str,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = normal_param(rng, (in_dim, out_dim), f"{name}.w", dtype=dtype)
        self.b = Parameter(np.zeros(out_dim, dtype=dtype), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]
