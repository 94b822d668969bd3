"""Decision-level distillation on part-wise softened class distributions.

Teacher-side quantities never carry gradients, so they are computed in
plain numpy as log-probabilities with layout (B, P, C).  The ``*_from_target``
functions take such a teacher log-probability tensor directly, which is
how an ensemble of teachers plugs in.  Student logits may be a Var.

Working in log space means no probability clamp is needed: a masked
target class contributes exactly zero mass instead of an underflowed one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax as np_log_softmax
from scipy.special import logsumexp as np_logsumexp

from . import gradcore as gc
from .errors import ConfigError, LabelError, ShapeError
from .losses_base import check_labels
from .part_space import check_part_tensor

__all__ = [
    "SoftDistParams", "DkdParams", "DecisionBreakdown", "soften", "teacher_log_probs",
    "kl_loss", "kl_from_target", "kl_grad_closed_form", "collapse_binary", "tckd_loss",
    "tckd_from_target", "masked_soften", "nckd_loss", "nckd_from_target", "dkd_loss",
    "dkd_from_target", "naive_kd_loss", "logit_mse_loss",
]

INF = math.inf


@dataclass(frozen=True)
class SoftDistParams:
    T: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"temperature must be finite and > 0, got {self.T}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be finite and > 0, got {self.alpha}")

    @property
    def scale(self):
        return self.alpha / self.T


@dataclass(frozen=True)
class DkdParams:
    alpha_d: float = 1.0
    beta_d: float = 1.0
    gamma: float = INF  # inf removes the target class exactly

    def __post_init__(self):
        if not (np.isfinite(self.alpha_d) and self.alpha_d >= 0):
            raise ConfigError(f"alpha_d must be finite and >= 0, got {self.alpha_d}")
        if not (np.isfinite(self.beta_d) and self.beta_d >= 0):
            raise ConfigError(f"beta_d must be finite and >= 0, got {self.beta_d}")
        if not (self.gamma == INF or (np.isfinite(self.gamma) and self.gamma >= 30)):
            raise ConfigError(f"gamma must be inf or a finite value >= 30, got {self.gamma}")


@dataclass
class DecisionBreakdown:
    total: object
    tckd: object
    nckd: object


def _class_last(logits):
    return gc.moveaxis(logits, 1, 2)


def _check_pair(student, teacher_shape):
    s = check_part_tensor(student, min_channels=2, what="student logits")
    if s.shape != tuple(teacher_shape):
        raise ShapeError(f"student logits {s.shape} and teacher {tuple(teacher_shape)} are not aligned")
    return s


def _check_target(student, log_qt):
    s = check_part_tensor(student, min_channels=2, what="student logits")
    B, C, P = s.shape
    if np.shape(log_qt) != (B, P, C):
        raise ShapeError(f"teacher target must have shape {(B, P, C)}, got {np.shape(log_qt)}")
    return s


def teacher_log_probs(teacher_logits, params: SoftDistParams):
    """Softened teacher log-distribution, layout (B, P, C)."""
    z = check_part_tensor(teacher_logits, min_channels=2, what="teacher logits")
    return np_log_softmax(params.scale * np.moveaxis(z, 1, 2), axis=-1)


def soften(logits, params: SoftDistParams):
    """Part-wise softmax of alpha * Z / T, returned in (B, C, P) layout."""
    check_part_tensor(logits, min_channels=2, what="logits")
    return gc.softmax(params.scale * logits, axis=1)


def _kl_terms(log_qt, log_qs):
    """sum_c q_t (log q_t - log q_s) with 0 log 0 = 0; ``log_qs`` may be a Var."""
    qt = np.exp(log_qt)
    present = qt > 0
    entropy_part = np.sum(np.where(present, qt * np.where(present, log_qt, 0.0), 0.0))
    return entropy_part - gc.sum(gc.mul(np.where(present, qt, 0.0), gc.where(present, log_qs, 0.0)))


def kl_from_target(student_logits, log_qt, params: SoftDistParams):
    s = _check_target(student_logits, log_qt)
    B, _, P = s.shape
    log_qs = gc.log_softmax(params.scale * _class_last(student_logits), axis=-1)
    return (params.T ** 2 / (B * P)) * _kl_terms(log_qt, log_qs)


def kl_loss(student_logits, teacher_logits, params: SoftDistParams = SoftDistParams()):
    """Part-calibrated KL(q_t || q_s) with the T^2 factor and 1/(BP) averaging."""
    _check_pair(student_logits, np.shape(teacher_logits))
    return kl_from_target(student_logits, teacher_log_probs(teacher_logits, params), params)


def kl_grad_closed_form(student_logits, teacher_logits, params: SoftDistParams = SoftDistParams()):
    """(alpha T / BP) (q_s - q_t), layout (B, C, P)."""
    s = _check_pair(gc.value_of(student_logits), np.shape(teacher_logits))
    B, _, P = s.shape
    qs = np.exp(np_log_softmax(params.scale * s, axis=1))
    qt = np.exp(np_log_softmax(params.scale * np.asarray(teacher_logits, dtype=float), axis=1))
    return (params.alpha * params.T / (B * P)) * (qs - qt)


def collapse_binary(q, y):
    """[q(y), sum of the other classes] for a single probability row."""
    q = np.asarray(q, dtype=float)
    if not 0 <= int(y) < q.shape[-1]:
        raise LabelError(f"target {y} outside 0..{q.shape[-1] - 1}")
    others = np.delete(q, int(y), axis=-1).sum(axis=-1)
    return np.array([q[..., int(y)], others])


def _target_index(y, B, P):
    return np.broadcast_to(y[:, None, None], (B, P, 1))


def _nontarget_index(y, B, P, C):
    cols = np.arange(C)
    rows = np.stack([cols[cols != t] for t in y])  # (B, C-1)
    return np.broadcast_to(rows[:, None, :], (B, P, C - 1))


def _collapsed_log(log_q, tgt, non):
    """log of [target mass, non-target mass] from a log-distribution (B, P, C)."""
    if isinstance(log_q, gc.Var):
        lt = gc.take_along(log_q, tgt, axis=-1)
        lo = gc.logsumexp(gc.take_along(log_q, non, axis=-1), axis=-1, keepdims=True)
        return gc.concat([lt, lo], axis=-1)
    lt = np.take_along_axis(log_q, tgt, -1)
    lo = np_logsumexp(np.take_along_axis(log_q, non, -1), axis=-1, keepdims=True)
    return np.concatenate([lt, lo], axis=-1)


def tckd_from_target(student_logits, log_qt, labels, params: SoftDistParams):
    s = _check_target(student_logits, log_qt)
    B, C, P = s.shape
    y = check_labels(labels, B, C)
    tgt, non = _target_index(y, B, P), _nontarget_index(y, B, P, C)
    log_qs = gc.log_softmax(params.scale * _class_last(student_logits), axis=-1)
    return (params.T ** 2 / (B * P)) * _kl_terms(_collapsed_log(log_qt, tgt, non),
                                                 _collapsed_log(log_qs, tgt, non))


def tckd_loss(student_logits, teacher_logits, labels, params: SoftDistParams = SoftDistParams()):
    _check_pair(student_logits, np.shape(teacher_logits))
    return tckd_from_target(student_logits, teacher_log_probs(teacher_logits, params), labels, params)


def _masked_log(scaled, y, gamma, B, P, C):
    """Log of the target-excluded distribution.

    With gamma = inf the target has probability exactly 0 and the result
    covers only the C-1 non-target classes (their indices are returned too).
    """
    if gamma == INF:
        non = _nontarget_index(y, B, P, C)
        if isinstance(scaled, gc.Var):
            return gc.log_softmax(gc.take_along(scaled, non, axis=-1), axis=-1), non
        return np_log_softmax(np.take_along_axis(scaled, non, -1), axis=-1), non
    onehot = np.zeros((B, P, C))
    np.put_along_axis(onehot, _target_index(y, B, P), 1.0, -1)
    if isinstance(scaled, gc.Var):
        return gc.log_softmax(scaled - gamma * onehot, axis=-1), None
    return np_log_softmax(scaled - gamma * onehot, axis=-1), None


def masked_soften(logits, labels, params: SoftDistParams = SoftDistParams(), gamma=INF):
    """softmax(alpha Z / T - gamma [c = y]) in (B, C, P) layout."""
    z = check_part_tensor(gc.value_of(logits), min_channels=2, what="logits")
    B, C, P = z.shape
    y = check_labels(labels, B, C)
    log_q, non = _masked_log(params.scale * np.moveaxis(z, 1, 2), y, gamma, B, P, C)
    if non is None:
        q = np.exp(log_q)
    else:
        q = np.zeros((B, P, C))
        index = list(np.indices(non.shape, sparse=True))
        index[-1] = non
        q[tuple(index)] = np.exp(log_q)
    return np.moveaxis(q, 2, 1)


def nckd_from_target(student_logits, log_qt, labels, params: SoftDistParams, gamma=INF):
    s = _check_target(student_logits, log_qt)
    B, C, P = s.shape
    y = check_labels(labels, B, C)
    # the teacher log-distribution differs from its scaled logits by a per-row
    # constant, which the masked softmax ignores
    log_t, _ = _masked_log(np.asarray(log_qt), y, gamma, B, P, C)
    log_s, _ = _masked_log(params.scale * _class_last(student_logits), y, gamma, B, P, C)
    return (params.T ** 2 / (B * P)) * _kl_terms(log_t, log_s)


def nckd_loss(student_logits, teacher_logits, labels, params: SoftDistParams = SoftDistParams(), gamma=INF):
    _check_pair(student_logits, np.shape(teacher_logits))
    return nckd_from_target(student_logits, teacher_log_probs(teacher_logits, params), labels, params, gamma)


def dkd_from_target(student_logits, log_qt, labels, params: SoftDistParams, dkd: DkdParams):
    tckd = tckd_from_target(student_logits, log_qt, labels, params)
    nckd = nckd_from_target(student_logits, log_qt, labels, params, dkd.gamma)
    return DecisionBreakdown(total=dkd.alpha_d * tckd + dkd.beta_d * nckd, tckd=tckd, nckd=nckd)


def dkd_loss(student_logits, teacher_logits, labels, params: SoftDistParams = SoftDistParams(),
             dkd: DkdParams = DkdParams()):
    _check_pair(student_logits, np.shape(teacher_logits))
    return dkd_from_target(student_logits, teacher_log_probs(teacher_logits, params), labels, params, dkd)


def naive_kd_loss(student_logits, teacher_logits, params: SoftDistParams = SoftDistParams()):
    """Plain temperature KD on part-pooled logits (no per-part calibration)."""
    _check_pair(student_logits, np.shape(teacher_logits))
    s = gc.mean(student_logits, axis=2, keepdims=True)
    t = np.mean(np.asarray(teacher_logits, dtype=float), axis=2, keepdims=True)
    return kl_loss(s, t, params)


def logit_mse_loss(student_logits, teacher_logits):
    """Mean squared logit difference over (B, C, P)."""
    _check_pair(student_logits, np.shape(teacher_logits))
    return gc.mean(gc.square(student_logits - np.asarray(teacher_logits, dtype=float)))
