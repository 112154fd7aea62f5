"""Weight-shared bidirectional transformer encoder.

One set of layer parameters is applied ``num_layers`` times, so the encoder
parameter count is independent of depth. Sublayers follow the post-norm
residual pattern: x <- LN(x + attn(x)); x <- LN(x + ff(x)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Linear, normal_param
from .tensor import Parameter, Tensor, dropout, layer_norm, gelu, softmax

MASK_BIAS = -1e9  # additive pre-softmax logit for padded keys


@dataclass
class EncoderConfig:
    num_layers: int = 8
    num_heads: int = 12
    hidden: int = 768
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.num_heads != 0:
            raise ValueError(
                f"hidden {self.hidden} must be divisible by num_heads {self.num_heads}"
            )

    @property
    def ff_width(self) -> int:
        return 4 * self.hidden

    def tag(self) -> str:
        return f"{self.num_layers}-{self.num_heads}-{self.hidden}"


class SharedLayerParams:
    """The single transformer layer reused at every depth."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        h = config.hidden
        self.q = Linear(h, h, "enc.attn.q", rng)
        self.k = Linear(h, h, "enc.attn.k", rng)
        self.v = Linear(h, h, "enc.attn.v", rng)
        self.o = Linear(h, h, "enc.attn.o", rng)
        self.ff0 = Linear(h, config.ff_width, "enc.ff.0", rng)
        self.ff1 = Linear(config.ff_width, h, "enc.ff.1", rng)
        self.ln1_g = Parameter(np.ones(h, dtype=np.float32), "enc.ln1.g")
        self.ln1_b = Parameter(np.zeros(h, dtype=np.float32), "enc.ln1.b")
        self.ln2_g = Parameter(np.ones(h, dtype=np.float32), "enc.ln2.g")
        self.ln2_b = Parameter(np.zeros(h, dtype=np.float32), "enc.ln2.b")

    def self_attention(self, x: Tensor, mask: np.ndarray | None = None,
                       drop_rng: np.random.Generator | None = None) -> Tensor:
        """Scaled dot-product multi-head attention with padded keys masked out."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
            if mask is not None:
                mask = np.asarray(mask).reshape(1, -1)
        b, n, h = x.shape
        heads = self.config.num_heads
        hd = h // heads
        if mask is None:
            mask = np.ones((b, n), dtype=np.float32)
        else:
            mask = np.asarray(mask, dtype=np.float32).reshape(b, n)
        if np.any(mask.sum(axis=-1) == 0):
            raise ValueError("attention over a fully masked sequence")

        def split(t):
            return t.reshape(b, n, heads, hd).transpose(0, 2, 1, 3)

        q = split(self.q(x))
        k = split(self.k(x))
        v = split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        bias = (1.0 - mask)[:, None, None, :] * MASK_BIAS
        weights = softmax(scores + Tensor(bias.astype(np.float32)), axis=-1)
        weights = dropout(weights, self.config.dropout, drop_rng)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, h)
        out = self.o(ctx)
        return out.reshape(n, h) if squeeze else out

    def feed_forward(self, x: Tensor) -> Tensor:
        """Position-wise H -> 4H -> H with GELU after the widening layer."""
        return self.ff1(gelu(self.ff0(x)))

    def apply(self, x: Tensor, mask: np.ndarray | None = None,
              drop_rng: np.random.Generator | None = None) -> Tensor:
        p = self.config.dropout
        attn = dropout(self.self_attention(x, mask, drop_rng), p, drop_rng)
        x = layer_norm(x + attn, self.ln1_g, self.ln1_b)
        ff = dropout(self.feed_forward(x), p, drop_rng)
        return layer_norm(x + ff, self.ln2_g, self.ln2_b)

    def parameters(self) -> list[Parameter]:
        return [
            *self.q.parameters(), *self.k.parameters(), *self.v.parameters(),
            *self.o.parameters(), *self.ff0.parameters(), *self.ff1.parameters(),
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
        ]


class WeightSharedEncoder:
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.layer = SharedLayerParams(config, rng)

    def forward(self, x: Tensor, mask: np.ndarray | None = None,
                drop_rng: np.random.Generator | None = None) -> Tensor:
        for _ in range(self.config.num_layers):
            x = self.layer.apply(x, mask, drop_rng)
        return x

    __call__ = forward

    def parameters(self) -> list[Parameter]:
        return self.layer.parameters()
