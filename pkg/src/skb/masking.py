"""Masked-point pretraining: mask sampling, reconstruction, and completion.

Offsets and pen states are masked independently at a fixed per-sketch ratio.
Position masks are split between stroke-start and in-stroke points, state
masks between the three pen-state classes, each proportional to that class's
count in the sketch via largest-remainder rounding. A masked offset is zeroed;
a masked state becomes the all-zero flag triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Sketch, derive_stroke_ids, stroke_start_flags, truncate_pad, truncated
from .nn import Linear
from .tensor import Tensor, cross_entropy, gelu, l1_loss

MASK_MODES = ("single", "position", "state", "full")


@dataclass
class MaskPlan:
    pos_masked: np.ndarray                 # all position-masked indices, sorted
    pos_stroke_start: np.ndarray
    pos_in_stroke: np.ndarray
    state_masked: np.ndarray               # all state-masked indices, sorted
    state_by_class: tuple[np.ndarray, np.ndarray, np.ndarray]
    ratio: float

    @classmethod
    def empty(cls, ratio: float = 0.0) -> "MaskPlan":
        e = np.empty(0, dtype=np.int64)
        return cls(e, e, e, e, (e, e, e), ratio)


@dataclass
class GestaltBatch:
    """Padded ground truth, masked input, and per-point mask channels."""

    s_gt: np.ndarray                       # [b, L, 5] float32
    s_mask: np.ndarray                     # [b, L, 5] float32, masked entries zeroed
    pos_mask: np.ndarray                   # [b, L] 1 where the offset is masked
    state_mask: np.ndarray                 # [b, L] 1 where the state is masked
    state_labels: np.ndarray               # [b, L] int64 true state class
    attn_mask: np.ndarray                  # [b, L] 1 at real points
    stroke_ids: np.ndarray                 # [b, L] int32
    plans: list[MaskPlan] = field(default_factory=list)


def largest_remainder(total: int, counts: np.ndarray) -> np.ndarray:
    """Apportion ``total`` units proportionally to ``counts``.

    Floor the exact quotas, then hand leftover units to the largest
    fractional remainders (ties to the lower class index). Each allocation
    stays within 1 of the exact quota and never exceeds its class count.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.sum()
    if total > n:
        raise ValueError(f"cannot allocate {total} over {n} items")
    if total == 0 or n == 0:
        return np.zeros_like(counts)
    quotas = total * counts / n
    alloc = np.floor(quotas).astype(np.int64)
    frac = quotas - alloc
    leftover = total - int(alloc.sum())
    if leftover:
        order = np.lexsort((np.arange(len(counts)), -frac))
        alloc[order[:leftover]] += 1
    return alloc


def _sample_classes(class_indices: list[np.ndarray], total: int,
                    rng: np.random.Generator) -> list[np.ndarray]:
    counts = np.array([idx.size for idx in class_indices])
    alloc = largest_remainder(total, counts)
    picks = []
    for idx, k in zip(class_indices, alloc):
        chosen = rng.choice(idx, size=int(k), replace=False) if k else np.empty(0, dtype=np.int64)
        picks.append(np.sort(chosen.astype(np.int64)))
    return picks


def mask_budget(n: int, ratio: float) -> int:
    return int(round(ratio * n))


def sample_position_mask(sketch: Sketch, ratio: float, rng: np.random.Generator
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(all, stroke-start subset, in-stroke subset) position-mask indices."""
    if sketch.n < 1:
        raise ValueError("cannot mask an empty sketch")
    flags = stroke_start_flags(sketch)
    start_idx = np.flatnonzero(flags)
    in_idx = np.flatnonzero(~flags)
    k = mask_budget(sketch.n, ratio)
    start_pick, in_pick = _sample_classes([start_idx, in_idx], k, rng)
    return np.sort(np.concatenate([start_pick, in_pick])), start_pick, in_pick


def sample_state_mask(sketch: Sketch, ratio: float, rng: np.random.Generator
                      ) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(all, per-state subsets) state-mask indices, proportional to p1/p2/p3 counts."""
    if sketch.n < 1:
        raise ValueError("cannot mask an empty sketch")
    states = sketch.states()
    classes = [np.flatnonzero(states == c) for c in range(3)]
    k = mask_budget(sketch.n, ratio)
    picks = _sample_classes(classes, k, rng)
    return np.sort(np.concatenate(picks)), tuple(picks)


def sample_mask_plan(sketch: Sketch, ratio: float, mode: str,
                     rng: np.random.Generator) -> MaskPlan:
    if mode not in MASK_MODES:
        raise ValueError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")
    if mode == "single":
        # Uniform whole-point masking without class proportionality; offsets
        # and states are masked together at the same indices.
        k = mask_budget(sketch.n, ratio)
        idx = np.sort(rng.choice(sketch.n, size=k, replace=False).astype(np.int64))
        flags = stroke_start_flags(sketch)
        states = sketch.states()[idx] if k else np.empty(0, dtype=np.int64)
        return MaskPlan(
            pos_masked=idx,
            pos_stroke_start=idx[flags[idx]] if k else idx,
            pos_in_stroke=idx[~flags[idx]] if k else idx,
            state_masked=idx,
            state_by_class=tuple(idx[states == c] for c in range(3)),
            ratio=ratio,
        )
    empty = np.empty(0, dtype=np.int64)
    pos_all = start = in_stroke = empty
    state_all, by_class = empty, (empty, empty, empty)
    if mode in ("position", "full"):
        pos_all, start, in_stroke = sample_position_mask(sketch, ratio, rng)
    if mode in ("state", "full"):
        state_all, by_class = sample_state_mask(sketch, ratio, rng)
    return MaskPlan(pos_all, start, in_stroke, state_all, by_class, ratio)


def apply_mask(s_gt: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Zero masked offset and state entries; everything else is copied."""
    s_gt = np.asarray(s_gt)
    n = s_gt.shape[0]
    for idx in (plan.pos_masked, plan.state_masked):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"mask index out of range for {n} points")
    masked = s_gt.copy()
    masked[plan.pos_masked, :2] = 0.0
    masked[plan.state_masked, 2:] = 0.0
    return masked


def make_gestalt_batch(sketches: list[Sketch], max_len: int, ratio: float,
                       mode: str, rng: np.random.Generator,
                       stroke_cap: int = 50) -> GestaltBatch:
    """Truncate, sample one plan per sketch, stack padded arrays."""
    b = len(sketches)
    width = min(max(s.n for s in sketches), max_len)
    s_gt = np.zeros((b, width, 5), dtype=np.float32)
    s_mask = np.zeros_like(s_gt)
    pos_mask = np.zeros((b, width), dtype=np.float32)
    state_mask = np.zeros((b, width), dtype=np.float32)
    state_labels = np.zeros((b, width), dtype=np.int64)
    attn = np.zeros((b, width), dtype=np.float32)
    ids = np.zeros((b, width), dtype=np.int32)
    plans = []
    for i, sk in enumerate(sketches):
        cut = truncated(sk, width)
        pts, mask, sid = truncate_pad(cut, width, stroke_cap)
        plan = sample_mask_plan(cut, ratio, mode, rng)
        s_gt[i] = pts
        s_mask[i] = apply_mask(pts, plan)
        pos_mask[i, plan.pos_masked] = 1.0
        state_mask[i, plan.state_masked] = 1.0
        state_labels[i, : cut.n] = cut.states()
        attn[i] = mask
        ids[i] = sid
        plans.append(plan)
    return GestaltBatch(s_gt, s_mask, pos_mask, state_mask, state_labels, attn, ids, plans)


class ReconstructionNetwork:
    """Mirror of the refinement stack: d_H -> 4 d_E -> 2 d_E -> d_E -> 5."""

    def __init__(self, hidden: int, embed_dim: int, rng: np.random.Generator):
        widths = [hidden, 4 * embed_dim, 2 * embed_dim, embed_dim, 5]
        self.layers = [
            Linear(widths[i], widths[i + 1], f"recon.{i}", rng)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x

    def reconstruct(self, encoder_out: Tensor) -> tuple[Tensor, Tensor]:
        """Split the 5 output channels into offset predictions and state logits."""
        out = self(encoder_out)
        return out[..., :2], out[..., 2:]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def sgm_loss_terms(batch: GestaltBatch, pos_pred: Tensor, state_logits: Tensor
                   ) -> tuple[Tensor, Tensor]:
    """(offset L1, state cross-entropy), each over masked locations only."""
    pos_mask2 = np.repeat(batch.pos_mask[..., None], 2, axis=-1)
    l1 = l1_loss(pos_pred, batch.s_gt[..., :2], pos_mask2)
    flat_logits = state_logits.reshape(-1, 3)
    ce = cross_entropy(flat_logits, batch.state_labels.reshape(-1),
                       batch.state_mask.reshape(-1))
    return l1, ce


def sgm_loss(batch: GestaltBatch, pos_pred: Tensor, state_logits: Tensor,
             lambda_pos: float = 1.0, lambda_state: float = 1.0) -> Tensor:
    l1, ce = sgm_loss_terms(batch, pos_pred, state_logits)
    return l1 * lambda_pos + ce * lambda_state


def complete_sketch(s_mask: np.ndarray, stroke_ids: np.ndarray, plan: MaskPlan,
                    model, scale: float = 1.0, label=None) -> Sketch:
    """Fill masked entries from the model; unmasked entries are copied verbatim.

    Masked offsets take the predicted values; masked states become the
    one-hot argmax of the state logits. Stroke ids of the result are derived
    from the completed states.
    """
    from .tensor import no_grad

    s_mask = np.asarray(s_mask, dtype=np.float32)
    with no_grad():
        pos_pred, state_logits = model.gestalt_forward(
            s_mask[None], np.asarray(stroke_ids)[None],
            np.ones((1, s_mask.shape[0]), dtype=np.float32),
        )
    completed = s_mask.copy()
    if plan.pos_masked.size:
        completed[plan.pos_masked, :2] = pos_pred.data[0, plan.pos_masked]
    if plan.state_masked.size:
        picked = np.argmax(state_logits.data[0, plan.state_masked], axis=-1)
        one_hot = np.zeros((picked.size, 3), dtype=np.float32)
        one_hot[np.arange(picked.size), picked] = 1.0
        completed[plan.state_masked, 2:] = one_hot
    return Sketch(
        points=completed.astype(np.float64),
        stroke_ids=derive_stroke_ids(completed),
        label=label,
        scale=scale,
    )
