"""Aggregation of several frozen teachers at the distribution and boundary level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as np_logsumexp
from scipy.special import softmax as np_softmax

from . import gradcore as gc
from .distill_boundary import ab_loss, teacher_signs
from .distill_decision import SoftDistParams, kl_loss, teacher_log_probs
from .errors import ConfigError, ShapeError
from .part_space import check_part_tensor, crop_channels, crop_parts

__all__ = ["TeacherOutput", "TeacherBank", "WeightPolicy", "entropy", "teacher_weights",
           "ensemble_log_distribution", "ensemble_distribution", "sign_vote",
           "strongest_teacher_select", "strongest_teacher_signs", "mean_teacher_loss"]


@dataclass(frozen=True)
class TeacherOutput:
    """Forward outputs of one frozen teacher: logits (B, C, P), embeddings (B, D, P)
    and optional intermediate part features per exposed layer."""

    logits: np.ndarray
    emb: np.ndarray
    layers: tuple = ()


def _detached(x, P):
    # teachers are frozen: keep values only, never tape nodes
    return np.asarray(crop_parts(gc.value_of(x), P), dtype=float)


class TeacherBank:
    """K teachers cropped to a shared part count (and to the student's, if given)."""

    def __init__(self, outputs, num_parts=None):
        outputs = list(outputs)
        if not outputs:
            raise ConfigError("a teacher bank needs at least one teacher")
        for k, out in enumerate(outputs):
            check_part_tensor(out.logits, min_channels=2, what=f"teacher {k} logits")
            check_part_tensor(out.emb, what=f"teacher {k} embeddings")
        parts = [o.logits.shape[2] for o in outputs] + [o.emb.shape[2] for o in outputs]
        P = min(parts) if num_parts is None else min(min(parts), num_parts)
        self.P = P
        self.outputs = [
            TeacherOutput(_detached(o.logits, P), _detached(o.emb, P),
                          tuple(_detached(h, P) for h in o.layers))
            for o in outputs
        ]
        shapes = {o.logits.shape for o in self.outputs}
        if len(shapes) != 1:
            raise ShapeError(f"teacher logits disagree after alignment: {sorted(shapes)}")
        batches = {o.emb.shape[0] for o in self.outputs}
        if batches != {self.outputs[0].logits.shape[0]}:
            raise ShapeError("teacher embeddings and logits disagree on batch size")

    def __len__(self):
        return len(self.outputs)

    def __iter__(self):
        return iter(self.outputs)

    def __getitem__(self, k):
        return self.outputs[k]

    @property
    def logits_shape(self):
        return self.outputs[0].logits.shape

    @property
    def min_dim(self):
        return min(o.emb.shape[1] for o in self.outputs)


@dataclass(frozen=True)
class WeightPolicy:
    mode: str = "entropy"
    tau: float = 1.0

    def __post_init__(self):
        if self.mode not in ("uniform", "entropy"):
            raise ConfigError(f"weight mode must be 'uniform' or 'entropy', got {self.mode!r}")
        if self.mode == "entropy" and not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be finite and > 0, got {self.tau}")


def entropy(log_q, axis=-1):
    q = np.exp(log_q)
    return -np.sum(np.where(q > 0, q * log_q, 0.0), axis=axis)


def _as_bank(bank):
    return bank if isinstance(bank, TeacherBank) else TeacherBank(bank)


def teacher_weights(bank, params: SoftDistParams = SoftDistParams(), policy: WeightPolicy = WeightPolicy()):
    """Per-(i, p) teacher weights, shape (K, B, P), each (i, p) column summing to one."""
    bank = _as_bank(bank)
    K = len(bank)
    B, _, P = bank.logits_shape
    if policy.mode == "uniform":
        return np.full((K, B, P), 1.0 / K)
    H = np.stack([entropy(teacher_log_probs(o.logits, params)) for o in bank])  # (K, B, P)
    return np_softmax(-policy.tau * H, axis=0)


def ensemble_log_distribution(bank, params: SoftDistParams = SoftDistParams(),
                              policy: WeightPolicy = WeightPolicy(), weights=None):
    """log q_T in (B, P, C) layout, computed as a log-sum-exp over teachers."""
    bank = _as_bank(bank)
    if weights is None:
        weights = teacher_weights(bank, params, policy)
    log_q = np.stack([teacher_log_probs(o.logits, params) for o in bank])  # (K, B, P, C)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)[..., None]
    return np_logsumexp(log_w + log_q, axis=0)


def ensemble_distribution(bank, params: SoftDistParams = SoftDistParams(),
                          policy: WeightPolicy = WeightPolicy(), weights=None):
    """Weighted mixture of softened teacher distributions, (B, C, P) layout."""
    return np.moveaxis(np.exp(ensemble_log_distribution(bank, params, policy, weights)), 2, 1)


def _teacher_embs(bank, dim=None, layer=None):
    embs = [o.emb if layer is None else o.layers[layer] for o in bank]
    dims = {e.shape[1] for e in embs}
    if dim is None:
        if len(dims) != 1:
            raise ShapeError(f"teacher embedding dims differ {sorted(dims)}; crop to a common dim first")
        return np.stack(embs)
    return np.stack([np.asarray(crop_channels(e, dim)) for e in embs])


def sign_vote(bank, weights, dim=None, layer=None):
    """sign(sum_k w_k sign(e_k)) per coordinate; exact ties go to -1.

    ``dim`` crops every teacher to its first ``dim`` channels first.
    """
    bank = _as_bank(bank)
    E = _teacher_embs(bank, dim, layer)  # (K, B, D, P)
    signs = np.where(E > 0, 1.0, -1.0)
    w = np.asarray(weights, dtype=float)
    if w.shape != (E.shape[0], E.shape[1], E.shape[3]):
        raise ShapeError(f"weights shape {w.shape} does not match bank (K, B, P)")
    score = np.sum(w[:, :, None, :] * signs, axis=0)
    return np.where(score > 0, 1.0, -1.0)


def strongest_teacher_select(bank, weights):
    """Index of the highest-weight teacher per (i, p); ties pick the lowest index."""
    return np.argmax(np.asarray(weights), axis=0)


def strongest_teacher_signs(bank, weights, dim=None, layer=None):
    bank = _as_bank(bank)
    E = _teacher_embs(bank, dim, layer)
    idx = strongest_teacher_select(bank, weights)  # (B, P)
    chosen = np.take_along_axis(E, idx[None, :, None, :], axis=0)[0]
    return teacher_signs(chosen)


def mean_teacher_loss(student_logits, student_emb, bank, params: SoftDistParams = SoftDistParams(),
                      m=1.0, lambda_logit=1.0, lambda_bound=1.0):
    """Average over teachers of the single-teacher KD loss (KL + AB)."""
    bank = _as_bank(bank)
    total = 0.0
    for out in bank:
        D = min(out.emb.shape[1], gc.value_of(student_emb).shape[1])
        term = lambda_logit * kl_loss(student_logits, out.logits, params)
        term = term + lambda_bound * ab_loss(crop_channels(student_emb, D), crop_channels(out.emb, D), m)
        total = total + term
    return total / len(bank)
