"""Downstream heads and evaluation metrics.

Classification reads the encoder output at the prepended cls row; retrieval
projects the ret row to a 256-wide embedding trained with a squared-Euclidean
triplet loss plus an auxiliary class cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sketch
from .nn import Linear
from .tensor import Tensor, concat, cross_entropy, relu

RETRIEVAL_DIM = 256


class ClassifierHead:
    def __init__(self, hidden: int, num_classes: int, rng: np.random.Generator):
        self.num_classes = num_classes
        self.proj = Linear(hidden, num_classes, "head.cls", rng)

    def __call__(self, features: Tensor) -> Tensor:
        return self.proj(features)

    def parameters(self):
        return self.proj.parameters()


class RetrievalHead:
    def __init__(self, hidden: int, num_classes: int, rng: np.random.Generator,
                 margin: float = 0.2):
        self.num_classes = num_classes
        self.margin = margin
        self.proj = Linear(hidden, RETRIEVAL_DIM, "head.ret", rng)
        self.aux = Linear(RETRIEVAL_DIM, num_classes, "head.ret_aux", rng)

    def __call__(self, features: Tensor) -> Tensor:
        return self.proj(features)

    def parameters(self):
        return [*self.proj.parameters(), *self.aux.parameters()]


@dataclass
class TripletBatch:
    anchor: list[Sketch]
    positive: list[Sketch]
    negative: list[Sketch]

    def validate(self):
        for a, p, n in zip(self.anchor, self.positive, self.negative):
            if a.label != p.label or a.label == n.label:
                raise ValueError(
                    f"triplet labels violated: anchor {a.label}, positive {p.label}, "
                    f"negative {n.label}"
                )


def triplet_loss(a_emb: Tensor, p_emb: Tensor, n_emb: Tensor, margin: float = 0.2) -> Tensor:
    """Hinge on squared Euclidean distances, averaged over the batch."""
    if a_emb.ndim == 1:
        a_emb, p_emb, n_emb = (t.reshape(1, -1) for t in (a_emb, p_emb, n_emb))
    d_ap = ((a_emb - p_emb) ** 2).sum(axis=-1)
    d_an = ((a_emb - n_emb) ** 2).sum(axis=-1)
    return relu(d_ap - d_an + margin).mean()


def retrieval_objective(a_emb: Tensor, p_emb: Tensor, n_emb: Tensor,
                        anchor_labels, negative_labels, head: RetrievalHead) -> Tensor:
    """Triplet loss plus auxiliary cross-entropy over all three members."""
    anchor_labels = np.asarray(anchor_labels, dtype=np.int64)
    negative_labels = np.asarray(negative_labels, dtype=np.int64)
    if np.any(anchor_labels == negative_labels):
        raise ValueError("negative labels must differ from anchor labels")
    trip = triplet_loss(a_emb, p_emb, n_emb, head.margin)
    logits = head.aux(concat([a_emb, p_emb, n_emb], axis=0))
    labels = np.concatenate([anchor_labels, anchor_labels, negative_labels])
    return trip + cross_entropy(logits, labels)


# -- metrics ---------------------------------------------------------------


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k best-scored classes.

    Ties go to the lower class index, so results are deterministic.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds the {scores.shape[1]} scored classes")
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def mean_average_precision(query_emb: np.ndarray, gallery_emb: np.ndarray,
                           query_labels: np.ndarray, gallery_labels: np.ndarray,
                           exclude_self: bool = False) -> float:
    """Mean over queries of average precision of the distance-ranked gallery.

    Ranking is ascending Euclidean distance with ties broken by gallery
    index. With ``exclude_self`` the gallery item sharing a query's index is
    skipped (for query-set == gallery-set protocols). Queries with no
    relevant gallery item contribute AP 0.
    """
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if gallery_emb.shape[0] == 0:
        raise ValueError("gallery is empty")
    dists = pairwise_sq_dists(np.asarray(query_emb), np.asarray(gallery_emb))
    aps = []
    for i in range(dists.shape[0]):
        d = dists[i]
        keep = np.ones(d.shape[0], dtype=bool)
        if exclude_self:
            keep[i] = False
        order = np.argsort(d[keep], kind="stable")
        relevant = (gallery_labels[keep] == query_labels[i])[order]
        total = int(relevant.sum())
        if total == 0:
            aps.append(0.0)
            continue
        ranks = np.flatnonzero(relevant) + 1
        precisions = np.cumsum(relevant)[ranks - 1] / ranks
        aps.append(float(precisions.mean()))
    return float(np.mean(aps))


def class_scores_from_neighbors(query_emb: np.ndarray, gallery_emb: np.ndarray,
                                gallery_labels: np.ndarray, num_classes: int,
                                exclude_self: bool = False) -> np.ndarray:
    """Per-class score matrix: negated distance to the nearest class exemplar.

    Feeds ``top_k_accuracy`` for retrieval, where a class's rank is set by
    its closest gallery item.
    """
    gallery_labels = np.asarray(gallery_labels)
    dists = pairwise_sq_dists(np.asarray(query_emb), np.asarray(gallery_emb))
    if exclude_self:
        np.fill_diagonal(dists, np.inf)
    scores = np.full((dists.shape[0], num_classes), -np.inf)
    for c in range(num_classes):
        cols = gallery_labels == c
        if cols.any():
            scores[:, c] = -dists[:, cols].min(axis=1)
    return scores
