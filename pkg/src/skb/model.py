"""Composed model: embedder, weight-shared encoder, reconstruction, heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import SketchEmbedder
from .encoder import EncoderConfig, WeightSharedEncoder
from .heads import ClassifierHead, RetrievalHead
from .masking import GestaltBatch, ReconstructionNetwork
from .tensor import Parameter, Tensor


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed_dim: int = 128
    max_len: int = 250
    stroke_cap: int = 50


class SketchModel:
    """All trainable state for pretraining and the downstream tasks.

    Heads are only constructed when ``num_classes`` is given; a pretraining
    checkpoint therefore carries embedder, encoder, and reconstruction
    parameters only.
    """

    def __init__(self, config: ModelConfig, num_classes: int | None = None,
                 task: str | None = None, seed: int = 0, margin: float = 0.2):
        self.config = config
        self.num_classes = num_classes
        init_seed, drop_seed = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(init_seed)
        self.drop_rng = np.random.default_rng(drop_seed)
        self.training = False
        h = config.encoder.hidden
        self.embedder = SketchEmbedder(
            config.embed_dim, h, config.max_len, config.stroke_cap, rng
        )
        self.encoder = WeightSharedEncoder(config.encoder, rng)
        self.recon = ReconstructionNetwork(h, config.embed_dim, rng)
        self.cls_head = None
        self.ret_head = None
        if num_classes:
            if task in (None, "finetune_cls", "eval", "cls"):
                self.cls_head = ClassifierHead(h, num_classes, rng)
            if task in ("finetune_ret", "ret"):
                self.ret_head = RetrievalHead(h, num_classes, rng, margin=margin)

    def train_mode(self, on: bool = True):
        self.training = on
        return self

    def _rng(self):
        return self.drop_rng if self.training else None

    # -- forward paths -------------------------------------------------------

    def encode(self, points: np.ndarray, stroke_ids: np.ndarray,
               mask: np.ndarray, special: str | None = None) -> Tensor:
        """[b, n, 5] points to [b, n(+1), d_H] encoder output."""
        x = self.embedder.forward(points, stroke_ids)
        if special is not None:
            x, mask = self.embedder.prepend_special(special, x, mask)
        return self.encoder.forward(x, mask, self._rng())

    def gestalt_forward(self, s_mask: np.ndarray, stroke_ids: np.ndarray,
                        attn_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        out = self.encode(s_mask, stroke_ids, attn_mask)
        return self.recon.reconstruct(out)

    def gestalt_batch_forward(self, batch: GestaltBatch) -> tuple[Tensor, Tensor]:
        return self.gestalt_forward(batch.s_mask, batch.stroke_ids, batch.attn_mask)

    def classify_logits(self, points, stroke_ids, mask) -> Tensor:
        if self.cls_head is None:
            raise ValueError("model has no classification head")
        out = self.encode(points, stroke_ids, mask, special="cls")
        return self.cls_head(out[:, 0, :])

    def retrieval_embed(self, points, stroke_ids, mask) -> Tensor:
        if self.ret_head is None:
            raise ValueError("model has no retrieval head")
        out = self.encode(points, stroke_ids, mask, special="ret")
        return self.ret_head(out[:, 0, :])

    # -- parameter plumbing ----------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = [
            *self.embedder.parameters(),
            *self.encoder.parameters(),
            *self.recon.parameters(),
        ]
        if self.cls_head is not None:
            params.extend(self.cls_head.parameters())
        if self.ret_head is not None:
            params.extend(self.ret_head.parameters())
        return params

    def param_dict(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def load_params(self, arrays: dict[str, np.ndarray], strict: bool = False):
        """Copy matching arrays into parameters; shape mismatches always raise."""
        own = self.param_dict()
        for name, arr in arrays.items():
            p = own.get(name)
            if p is None:
                if strict:
                    raise KeyError(f"checkpoint parameter {name} not in model")
                continue
            if p.data.shape != arr.shape:
                raise ValueError(
                    f"checkpoint parameter {name} has shape {arr.shape}, "
                    f"model expects {p.data.shape}"
                )
            p.data = arr.astype(p.data.dtype, copy=True)
        if strict:
            missing = set(own) - set(arrays)
            if missing:
                raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")
