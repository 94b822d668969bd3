"""The unified objective: base task loss plus weighted decision and boundary KD."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .distill_boundary import BoundaryParams, ab_loss_from_signs, mse_feature_loss
from .distill_decision import (DkdParams, SoftDistParams, dkd_from_target, kl_from_target,
                               logit_mse_loss)
from .errors import ConfigError
from .losses_base import BaseLossWeights, base_objective
from .multi_teacher import (TeacherBank, TeacherOutput, WeightPolicy, ensemble_log_distribution,
                            sign_vote, strongest_teacher_signs, teacher_weights)
from .part_space import crop_channels, crop_parts

__all__ = ["MultiTeacherParams", "HyperParams", "StudentOutputs", "LossBreakdown", "total_loss",
           "total_loss_and_grads", "ABLATION_VARIANTS", "ablation_variant", "kd_terms"]


@dataclass(frozen=True)
class MultiTeacherParams:
    policy: WeightPolicy = field(default_factory=WeightPolicy)
    boundary_agg: str = "vote"
    aggregation: str = "gaitkd"

    def __post_init__(self):
        if self.boundary_agg not in ("vote", "strongest"):
            raise ConfigError(f"boundary_agg must be 'vote' or 'strongest', got {self.boundary_agg!r}")
        if self.aggregation not in ("gaitkd", "mean_teacher"):
            raise ConfigError(f"aggregation must be 'gaitkd' or 'mean_teacher', got {self.aggregation!r}")


@dataclass(frozen=True)
class HyperParams:
    base: BaseLossWeights = field(default_factory=BaseLossWeights)
    soft: SoftDistParams = field(default_factory=SoftDistParams)
    dkd: DkdParams = field(default_factory=DkdParams)
    boundary: BoundaryParams = field(default_factory=BoundaryParams)
    lambda_logit: float = 1.0
    lambda_bound: float = 1.0
    decision_mode: str = "kl"
    logit_mode: str = "on"
    feature_mode: str = "ab"
    multi_teacher: MultiTeacherParams = field(default_factory=MultiTeacherParams)
    dim_align: str = "crop_min"

    def __post_init__(self):
        for name in ("lambda_logit", "lambda_bound"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        choices = {"decision_mode": ("kl", "dkd", "naive"), "logit_mode": ("on", "off", "mse"),
                   "feature_mode": ("ab", "mse", "none"), "dim_align": ("crop_min",)}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def uses_teachers(self):
        return ((self.logit_mode != "off" and self.lambda_logit > 0)
                or (self.feature_mode != "none" and self.lambda_bound > 0))


@dataclass
class StudentOutputs:
    logits: object
    emb: object
    layers: tuple = ()


@dataclass
class LossBreakdown:
    loss: object  # Var when the student outputs are on a tape
    total: float
    ce: float
    tri: float
    decision: float
    feature: float
    weighted: dict

    def as_dict(self):
        return {"total": self.total, "ce": self.ce, "tri": self.tri,
                "decision": self.decision, "feature": self.feature}


def _pool_parts(x):
    if isinstance(x, gc.Var):
        return gc.mean(x, axis=2, keepdims=True)
    return np.mean(np.asarray(x, dtype=float), axis=2, keepdims=True)


def _decision_term(s_logits, labels, bank, hp, weights):
    if hp.logit_mode == "mse":
        return sum(logit_mse_loss(s_logits, o.logits) for o in bank) / len(bank)
    if hp.decision_mode == "naive":
        pooled = TeacherBank([TeacherOutput(_pool_parts(o.logits), _pool_parts(o.emb)) for o in bank])
        w = teacher_weights(pooled, hp.soft, hp.multi_teacher.policy)
        target = ensemble_log_distribution(pooled, hp.soft, weights=w)
        return kl_from_target(_pool_parts(s_logits), target, hp.soft)
    target = ensemble_log_distribution(bank, hp.soft, weights=weights)
    if hp.decision_mode == "dkd":
        return dkd_from_target(s_logits, target, labels, hp.soft, hp.dkd).total
    return kl_from_target(s_logits, target, hp.soft)


def _boundary_signs(bank, weights, dim, layer, hp):
    if hp.multi_teacher.boundary_agg == "strongest":
        return strongest_teacher_signs(bank, weights, dim=dim, layer=layer)
    return sign_vote(bank, weights, dim=dim, layer=layer)


def _feature_term(student, bank, hp, weights):
    s_layers = list(student.layers) + [student.emb]
    w = np.asarray(hp.boundary.layer_weights, dtype=float)
    if not student.layers:
        w, s_layers = np.array([1.0]), [student.emb]
    elif w.size != len(s_layers):
        raise ConfigError(f"{w.size} layer weights for {len(s_layers)} exposed student layers")
    total = 0.0
    for li, (wl, s) in enumerate(zip(w, s_layers)):
        if wl == 0.0:
            continue
        layer = None if li == len(s_layers) - 1 else li
        t_dims = [(o.emb if layer is None else o.layers[layer]).shape[1] for o in bank]
        D = min([gc.value_of(s).shape[1]] + t_dims)
        s_c = crop_channels(s, D)
        if hp.feature_mode == "mse":
            term = sum(mse_feature_loss(s_c, crop_channels(o.emb if layer is None else o.layers[layer], D))
                       for o in bank) / len(bank)
        else:
            term = ab_loss_from_signs(s_c, _boundary_signs(bank, weights, D, layer, hp), hp.boundary.m)
        total = total + wl * term
    return total


def kd_terms(student: StudentOutputs, labels, bank: TeacherBank, hp: HyperParams):
    """(decision, feature) KD losses of an already part-aligned student against ``bank``."""
    if hp.multi_teacher.aggregation == "mean_teacher" and len(bank) > 1:
        parts = [kd_terms(student, labels, TeacherBank([o]), hp) for o in bank]
        return (sum(p[0] for p in parts) / len(parts), sum(p[1] for p in parts) / len(parts))
    weights = teacher_weights(bank, hp.soft, hp.multi_teacher.policy)
    decision = 0.0 if hp.logit_mode == "off" else _decision_term(student.logits, labels, bank, hp, weights)
    feature = 0.0 if hp.feature_mode == "none" else _feature_term(student, bank, hp, weights)
    return decision, feature


def total_loss(student: StudentOutputs, labels, teachers, hp: HyperParams) -> LossBreakdown:
    """Base task loss plus lambda_logit * decision KD plus lambda_bound * boundary KD.

    ``teachers`` is a TeacherBank, a list of TeacherOutput, or None.  Teacher
    tensors are used as constants, so no gradient ever reaches them.
    """
    base = base_objective(student.logits, student.emb, labels, hp.base)
    teachers = [] if teachers is None else teachers
    decision = feature = 0.0
    if hp.uses_teachers:
        if len(teachers) == 0:
            raise ConfigError("distillation weights are non-zero but no teacher was supplied")
        P_s = gc.value_of(student.logits).shape[2]
        outputs = teachers.outputs if isinstance(teachers, TeacherBank) else list(teachers)
        bank = TeacherBank(outputs, num_parts=P_s)
        aligned = StudentOutputs(crop_parts(student.logits, bank.P), crop_parts(student.emb, bank.P),
                                 tuple(crop_parts(h, bank.P) for h in student.layers))
        decision, feature = kd_terms(aligned, labels, bank, hp)
    w_dec = hp.lambda_logit if hp.logit_mode != "off" else 0.0
    w_feat = hp.lambda_bound if hp.feature_mode != "none" else 0.0
    weighted = {
        "ce": hp.base.lambda_ce * float(gc.value_of(base.ce)),
        "tri": hp.base.lambda_tri * float(gc.value_of(base.tri)),
        "decision": w_dec * float(gc.value_of(decision)),
        "feature": w_feat * float(gc.value_of(feature)),
    }
    loss = base.total
    if w_dec:
        loss = loss + w_dec * decision
    if w_feat:
        loss = loss + w_feat * feature
    return LossBreakdown(loss=loss, total=float(gc.value_of(loss)), ce=float(gc.value_of(base.ce)),
                         tri=float(gc.value_of(base.tri)), decision=float(gc.value_of(decision)),
                         feature=float(gc.value_of(feature)), weighted=weighted)


def total_loss_and_grads(logits, emb, labels, teachers, hp: HyperParams, layers=()):
    """Evaluate the objective on arrays and return (breakdown, grads by output name)."""
    tape = gc.Tape()
    s = StudentOutputs(tape.leaf(logits, "logits"), tape.leaf(emb, "emb"),
                       tuple(tape.leaf(h, f"layer{i}") for i, h in enumerate(layers)))
    out = total_loss(s, labels, teachers, hp)
    tape.backward(out.loss)
    grads = {"logits": s.logits.grad, "emb": s.emb.grad}
    grads.update({f"layer{i}": h.grad for i, h in enumerate(s.layers)})
    return out, grads


# Rows of the objective ablation: (logit_mode, decision_mode or None to keep, feature_mode)
ABLATION_VARIANTS = {
    "baseline": ("off", None, "none"),
    "logit_only": ("on", None, "none"),
    "boundary_only": ("off", None, "ab"),
    "full": ("on", None, "ab"),
    "naive_kd": ("on", "naive", "ab"),
    "mse_logit": ("mse", None, "ab"),
    "mse_only_feature": ("off", None, "mse"),
    "mse_both": ("mse", None, "mse"),
    "logit_mse_feature": ("on", None, "mse"),
}


def ablation_variant(hp: HyperParams, variant: str) -> HyperParams:
    try:
        logit_mode, decision_mode, feature_mode = ABLATION_VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown ablation variant {variant!r}; known: {sorted(ABLATION_VARIANTS)}") from None
    changes = {"logit_mode": logit_mode, "feature_mode": feature_mode}
    if decision_mode is not None:
        changes["decision_mode"] = decision_mode
    elif hp.decision_mode == "naive":
        changes["decision_mode"] = "kl"
    return dataclasses.replace(hp, **changes)
