"""Three-level sketch embedding: per-point, positional, and per-stroke.

The three d_E-wide embeddings are summed and lifted to the encoder width
d_H by a small fully-connected refinement stack. Learned classification and
retrieval tokens live directly at width d_H and are prepended after
refinement, so body positions keep their original indices.
"""

from __future__ import annotations

import numpy as np

from .nn import Linear, normal_param
from .tensor import Parameter, ShapeError, Tensor, concat, gelu


class RefineNetwork:
    """Fully-connected lift d_E -> 2 d_E -> 4 d_E -> d_H with GELU between."""

    def __init__(self, embed_dim: int, hidden: int, rng: np.random.Generator):
        widths = [embed_dim, 2 * embed_dim, 4 * embed_dim, hidden]
        self.layers = [
            Linear(widths[i], widths[i + 1], f"refine.{i}", rng)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


class SketchEmbedder:
    """Point/positional/stroke tables plus the refinement network."""

    def __init__(self, embed_dim: int, hidden: int, max_len: int, stroke_cap: int,
                 rng: np.random.Generator):
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.max_len = max_len
        self.stroke_cap = stroke_cap
        self.w_pt = normal_param(rng, (embed_dim, 5), "emb.w_pt")
        self.w_ps = normal_param(rng, (max_len, embed_dim), "emb.w_ps")
        self.w_str = normal_param(rng, (stroke_cap, embed_dim), "emb.w_str")
        self.cls_token = normal_param(rng, (hidden,), "emb.cls")
        self.ret_token = normal_param(rng, (hidden,), "emb.ret")
        self.refine = RefineNetwork(embed_dim, hidden, rng)

    # -- the three embedding levels -----------------------------------------

    def embed_points(self, points) -> Tensor:
        """Bias-free linear map of [..., n, 5] point rows to [..., n, d_E]."""
        if not isinstance(points, Tensor):
            points = Tensor(np.asarray(points, dtype=np.float32))
        return points @ self.w_pt.T

    def embed_positions(self, n: int) -> Tensor:
        """Rows 0..n-1 of the learned position table."""
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        return self.w_ps[:n]

    def embed_strokes(self, stroke_ids) -> Tensor:
        """Table lookup [..., n] -> [..., n, d_E]; same stroke, same row."""
        ids = np.asarray(stroke_ids)
        if ids.size and ids.max() >= self.stroke_cap:
            raise ValueError(
                f"stroke id {int(ids.max())} exceeds cap {self.stroke_cap}; clamp upstream"
            )
        if ids.size and ids.min() < 0:
            raise ValueError("stroke ids must be non-negative")
        return self.w_str[ids]

    def combine_and_refine(self, e_pt: Tensor, e_ps: Tensor, e_str: Tensor) -> Tensor:
        if e_pt.shape[-1] != self.embed_dim or e_str.shape != e_pt.shape:
            raise ShapeError(
                f"embedding addends disagree: {e_pt.shape}, {e_ps.shape}, {e_str.shape}"
            )
        if e_ps.shape[-2:] != e_pt.shape[-2:]:
            raise ShapeError(
                f"positional embedding shape {e_ps.shape} does not match {e_pt.shape}"
            )
        return self.refine(e_pt + e_ps + e_str)

    def forward(self, points, stroke_ids) -> Tensor:
        """[..., n, 5] points and [..., n] stroke ids to [..., n, d_H]."""
        n = np.asarray(points).shape[-2]
        e_pt = self.embed_points(points)
        e_ps = self.embed_positions(n)
        e_str = self.embed_strokes(stroke_ids)
        return self.combine_and_refine(e_pt, e_ps, e_str)

    def prepend_special(self, token: str, seq: Tensor, mask: np.ndarray
                        ) -> tuple[Tensor, np.ndarray]:
        """Prepend the learned cls/ret vector; extends the mask with a 1."""
        vec = {"cls": self.cls_token, "ret": self.ret_token}.get(token)
        if vec is None:
            raise ValueError(f"unknown special token {token!r}")
        mask = np.asarray(mask)
        if seq.ndim == 2:
            row = vec.reshape(1, self.hidden)
            out = concat([row, seq], axis=0)
            new_mask = np.concatenate([np.ones(1, dtype=mask.dtype), mask])
        elif seq.ndim == 3:
            batch = seq.shape[0]
            row = vec.reshape(1, 1, self.hidden) + Tensor(
                np.zeros((batch, 1, self.hidden), dtype=np.float32)
            )
            out = concat([row, seq], axis=1)
            ones = np.ones((batch, 1), dtype=mask.dtype)
            new_mask = np.concatenate([ones, mask], axis=1)
        else:
            raise ShapeError(f"expected [n, d_H] or [batch, n, d_H], got {seq.shape}")
        return out, new_mask

    def parameters(self) -> list[Parameter]:
        return [self.w_pt, self.w_ps, self.w_str, self.cls_token, self.ret_token,
                *self.refine.parameters()]
