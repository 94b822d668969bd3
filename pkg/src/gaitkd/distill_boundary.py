"""Boundary-level distillation: keep the student on the teacher's side of zero.

For each embedding coordinate the teacher's sign picks a half-line and the
student is penalised by the squared distance to ``e <= -m`` or ``e >= m``.
Zero-valued teacher coordinates count as the negative side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, NumericError, ShapeError
from .part_space import check_part_tensor

__all__ = ["BoundaryParams", "teacher_signs", "violation", "ab_loss", "ab_loss_from_signs",
           "ab_loss_vectorized", "ab_loss_multilayer", "mse_feature_loss"]


@dataclass(frozen=True)
class BoundaryParams:
    m: float = 1.0
    layer_weights: tuple = field(default=(0.0, 1.0))

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise ConfigError(f"margin must be finite and > 0, got {self.m}")
        w = np.asarray(self.layer_weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError(f"layer weights must be a non-empty vector of finite values >= 0, got {self.layer_weights}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"layer weights must sum to 1, got {w.sum()}")


def teacher_signs(teacher_emb):
    """+1 where the teacher coordinate is positive, -1 elsewhere (zero included)."""
    e = np.asarray(gc.value_of(teacher_emb), dtype=float)
    if not np.all(np.isfinite(e)):
        raise NumericError("teacher embeddings contain non-finite entries")
    return np.where(e > 0, 1.0, -1.0)


def violation(e, side, m):
    """Hinge distance of ``e`` from the allowed half-line of ``side`` ('-' or '+')."""
    if side in ("-", -1):
        return gc.relu(e + m)
    if side in ("+", 1):
        return gc.relu(m - e)
    raise ValueError(f"side must be '-' or '+', got {side!r}")


def _check_aligned(student_emb, teacher_shape):
    s = check_part_tensor(student_emb, what="student embeddings")
    if s.shape != tuple(teacher_shape):
        raise ShapeError(f"student embeddings {s.shape} and teacher {tuple(teacher_shape)} are not aligned")
    return s


def ab_loss_from_signs(student_emb, signs, m=1.0):
    """Mean over (B, D, P) of relu(m - sign * e_s)^2, i.e. the gated violation."""
    _check_aligned(student_emb, np.shape(signs))
    signs = np.asarray(signs, dtype=float)
    return gc.mean(gc.square(gc.relu(m - signs * student_emb)))


def ab_loss(student_emb, teacher_emb, m=1.0):
    """Activation-boundary loss, averaged over samples, dimensions and parts."""
    _check_aligned(student_emb, np.shape(gc.value_of(teacher_emb)))
    return ab_loss_from_signs(student_emb, teacher_signs(teacher_emb), m)


def ab_loss_vectorized(student_emb, teacher_emb, m=1.0):
    """Same loss written as per-part masked squared Frobenius norms."""
    s = _check_aligned(student_emb, np.shape(gc.value_of(teacher_emb)))
    B, D, P = s.shape
    t = np.asarray(gc.value_of(teacher_emb), dtype=float)
    total = 0.0
    for p in range(P):
        e_s = student_emb[:, :, p]
        mask_neg = (t[:, :, p] <= 0).astype(float)
        mask_pos = (t[:, :, p] > 0).astype(float)
        total = total + gc.sum(gc.square(mask_neg * gc.relu(e_s + m)))
        total = total + gc.sum(gc.square(mask_pos * gc.relu(m - e_s)))
    return total / (B * P * D)


def ab_loss_multilayer(layer_pairs, params: BoundaryParams):
    """Convex combination of per-layer losses; zero-weight layers are skipped."""
    w = np.asarray(params.layer_weights, dtype=float)
    if len(layer_pairs) != w.size:
        raise ConfigError(f"{len(layer_pairs)} layer pairs but {w.size} layer weights")
    total = 0.0
    for weight, (s, t) in zip(w, layer_pairs):
        if weight == 0.0:
            continue
        total = total + weight * ab_loss(s, t, params.m)
    return total


def mse_feature_loss(student_emb, teacher_emb):
    _check_aligned(student_emb, np.shape(gc.value_of(teacher_emb)))
    return gc.mean(gc.square(student_emb - np.asarray(gc.value_of(teacher_emb), dtype=float)))
