"""Student base objective: part-averaged cross-entropy plus batch-all triplet loss.

All functions accept plain arrays or :class:`~gaitkd.gradcore.Var` inputs;
with a Var the result is recorded on its tape.  Labels are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, LabelError, MiningError, ShapeError
from .part_space import check_part_tensor

__all__ = ["BaseLossWeights", "BaseBreakdown", "check_labels", "part_softmax_prob", "ce_loss",
           "normalize_embeddings", "pairwise_distances", "triplet_loss", "base_objective"]


@dataclass(frozen=True)
class BaseLossWeights:
    lambda_ce: float = 1.0
    lambda_tri: float = 1.0
    m_tri: float = 0.2

    def __post_init__(self):
        for name in ("lambda_ce", "lambda_tri", "m_tri"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class BaseBreakdown:
    total: object
    ce: object
    tri: object


def check_labels(labels, batch, num_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != batch:
        raise ShapeError(f"labels must have shape ({batch},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise LabelError("labels must be integers")
    if np.any(y < 0) or np.any(y >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)]
        raise LabelError(f"labels {sorted(set(bad.tolist()))} outside 0..{num_classes - 1}")
    return y


def part_softmax_prob(logits, p):
    """Class probabilities of part ``p`` (1-based), shape (B, C)."""
    z = check_part_tensor(logits, min_channels=2, what="logits")
    if not 1 <= p <= z.shape[2]:
        raise IndexError(f"part index {p} outside 1..{z.shape[2]}")
    return gc.softmax(logits[:, :, p - 1], axis=-1)


def ce_loss(logits, labels):
    z = check_part_tensor(logits, min_channels=2, what="logits")
    B, C, P = z.shape
    y = check_labels(labels, B, C)
    logp = gc.log_softmax(gc.moveaxis(logits, 1, 2), axis=-1)  # (B, P, C)
    idx = np.broadcast_to(y[:, None, None], (B, P, 1))
    return -gc.mean(gc.take_along(logp, idx, axis=-1))


def normalize_embeddings(emb):
    check_part_tensor(emb, what="embeddings")
    # (B, D, P) -> normalise each (i, p) column over D
    return gc.moveaxis(gc.l2_normalize(gc.moveaxis(emb, 1, 2), axis=-1), 2, 1)


def pairwise_distances(emb):
    """Euclidean distances between l2-normalised embeddings, shape (P, B, B)."""
    check_part_tensor(emb, what="embeddings")
    unit = gc.l2_normalize(gc.moveaxis(emb, 2, 0), axis=-1)  # (P, B, D)
    P, B, D = gc.value_of(unit).shape
    left = gc.reshape(unit, (P, B, 1, D))
    right = gc.reshape(unit, (P, 1, B, D))
    return gc.sqrt(gc.sum(gc.square(left - right), axis=-1))


def _triplet_mask(y):
    same = y[:, None] == y[None, :]
    not_self = ~np.eye(len(y), dtype=bool)
    pos = same & not_self
    neg = ~same
    return pos[:, :, None] & neg[:, None, :]  # (anchor, positive, negative)


def check_mining(y):
    y = np.asarray(y)
    if y.size == 0:
        raise ShapeError("empty batch")
    labels, counts = np.unique(y, return_counts=True)
    lonely = labels[counts < 2]
    if lonely.size:
        raise MiningError(f"labels without a positive in the batch: {lonely.tolist()}")
    if labels.size < 2:
        raise MiningError("batch holds a single identity, no negatives to mine")


def triplet_margins(emb, labels, m_tri):
    """Hinge arguments m + d(a,p) - d(a,n) for all valid triplets, shape (P, B, B, B)."""
    dist = pairwise_distances(emb)
    P, B, _ = gc.value_of(dist).shape
    return (m_tri + gc.reshape(dist, (P, B, B, 1))) - gc.reshape(dist, (P, B, 1, B))


def triplet_loss(emb, labels, m_tri=0.2):
    """Batch-all triplet loss on normalised part embeddings.

    Each part averages the hinge over its active (positive-loss) triplets,
    or is zero when none is active; parts are then averaged.
    """
    arr = check_part_tensor(emb, what="embeddings")
    y = np.asarray(labels)
    if y.shape != (arr.shape[0],):
        raise ShapeError(f"labels must have shape ({arr.shape[0]},), got {y.shape}")
    check_mining(y)
    valid = _triplet_mask(y)
    hinge = gc.relu(triplet_margins(emb, y, m_tri)) * valid
    active = ((gc.value_of(hinge) > 0) & valid).reshape(arr.shape[2], -1).sum(axis=1)
    per_part = gc.sum(gc.reshape(hinge, (arr.shape[2], -1)), axis=1) / np.maximum(active, 1)
    return gc.mean(per_part)


def base_objective(logits, emb, labels, weights: BaseLossWeights = BaseLossWeights()):
    ce = ce_loss(logits, labels)
    tri = triplet_loss(emb, labels, weights.m_tri)
    total = weights.lambda_ce * ce + weights.lambda_tri * tri
    return BaseBreakdown(total=total, ce=ce, tri=tri)
