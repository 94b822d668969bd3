"""Finite-difference audit of every differentiable loss in the package.

Each registry entry draws a random instance away from hinge kinks, so
central differences are valid at the sampled point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradcore as gc
from .distill_boundary import BoundaryParams, ab_loss, ab_loss_multilayer, mse_feature_loss
from .distill_decision import (DkdParams, SoftDistParams, dkd_loss, kl_loss, logit_mse_loss,
                               naive_kd_loss, nckd_loss, tckd_loss)
from .losses_base import ce_loss, pairwise_distances, triplet_loss
from .multi_teacher import TeacherBank, TeacherOutput, WeightPolicy, sign_vote, teacher_weights
from .objective import HyperParams, MultiTeacherParams, StudentOutputs, total_loss

__all__ = ["GradCase", "REGISTRY", "AuditRow", "run_audit"]

KINK_GAP = 1e-3
LABELS = np.array([0, 0, 1, 1, 2, 2])


@dataclass(frozen=True)
class GradCase:
    name: str
    make: Callable  # rng -> (f, x)
    tol: float = 1e-5
    directions: int = 0  # 0 checks every coordinate


def _params(rng):
    return SoftDistParams(T=float(rng.uniform(0.5, 4.0)), alpha=float(rng.uniform(0.5, 2.0)))


def _logit_pair(rng, B=4, C=5, P=2):
    return rng.normal(scale=2, size=(B, C, P)), rng.normal(scale=2, size=(B, C, P)), rng.integers(0, C, size=B)


def _away_from_margin(e, signs, m):
    """Nudge student coordinates whose hinge argument m - s*e is within KINK_GAP of zero."""
    arg = m - signs * e
    close = np.abs(arg) < KINK_GAP
    return np.where(close, e - signs * 2 * KINK_GAP, e)


def _triplet_safe(rng, shape, m_tri, tries=200):
    P = shape[2]
    for _ in range(tries):
        e = rng.normal(size=shape)
        d = pairwise_distances(e)
        arg = m_tri + d[:, :, :, None] - d[:, :, None, :]
        same = LABELS[:, None] == LABELS[None, :]
        valid = (same & ~np.eye(len(LABELS), dtype=bool))[:, :, None] & ~same[:, None, :]
        if np.all(np.abs(arg[np.broadcast_to(valid, (P,) + valid.shape)]) > KINK_GAP):
            return e
    raise RuntimeError("could not draw a kink-free triplet instance")


def _ce(rng):
    z, _, y = _logit_pair(rng)
    return (lambda v: ce_loss(v, y)), z


def _triplet(rng):
    m = float(rng.uniform(0.1, 0.5))
    e = _triplet_safe(rng, (6, 3, 2), m)
    return (lambda v: triplet_loss(v, LABELS, m)), e


def _kl(rng):
    s, t, _ = _logit_pair(rng)
    p = _params(rng)
    return (lambda v: kl_loss(v, t, p)), s


def _tckd(rng):
    s, t, y = _logit_pair(rng)
    p = _params(rng)
    return (lambda v: tckd_loss(v, t, y, p)), s


def _nckd(rng):
    s, t, y = _logit_pair(rng)
    p = _params(rng)
    gamma = np.inf if rng.random() < 0.5 else 40.0
    return (lambda v: nckd_loss(v, t, y, p, gamma)), s


def _dkd(rng):
    s, t, y = _logit_pair(rng)
    p = _params(rng)
    d = DkdParams(alpha_d=float(rng.uniform(0, 2)), beta_d=float(rng.uniform(0, 8)))
    return (lambda v: dkd_loss(v, t, y, p, d).total), s


def _naive(rng):
    s, t, _ = _logit_pair(rng)
    p = _params(rng)
    return (lambda v: naive_kd_loss(v, t, p)), s


def _ab(rng):
    m = float(rng.uniform(0.2, 1.5))
    t = rng.normal(size=(3, 4, 2))
    s = _away_from_margin(rng.normal(scale=1.5, size=t.shape), np.where(t > 0, 1.0, -1.0), m)
    return (lambda v: ab_loss(v, t, m)), s


def _ab_multilayer(rng):
    params = BoundaryParams(m=float(rng.uniform(0.2, 1.5)), layer_weights=(0.3, 0.7))
    t0, t1 = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 4, 2))
    s0 = _away_from_margin(rng.normal(scale=1.5, size=t0.shape), np.where(t0 > 0, 1.0, -1.0), params.m)
    s1 = _away_from_margin(rng.normal(scale=1.5, size=t1.shape), np.where(t1 > 0, 1.0, -1.0), params.m)
    n0 = s0.size
    x = np.concatenate([s0.ravel(), s1.ravel()])

    def f(v):
        a = gc.reshape(v[:n0], s0.shape)
        b = gc.reshape(v[n0:], s1.shape)
        return ab_loss_multilayer([(a, t0), (b, t1)], params)

    return f, x


def _logit_mse(rng):
    s, t, _ = _logit_pair(rng)
    return (lambda v: logit_mse_loss(v, t)), s


def _feature_mse(rng):
    s, t = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    return (lambda v: mse_feature_loss(v, t)), s


def _total(rng):
    """Full objective over student logits, embeddings and one exposed layer, two teachers."""
    B, C, P, D, H = 6, 4, 2, 3, 4
    hp = HyperParams(
        soft=_params(rng), boundary=BoundaryParams(m=float(rng.uniform(0.3, 1.0)), layer_weights=(0.4, 0.6)),
        lambda_logit=float(rng.uniform(0.1, 2)), lambda_bound=float(rng.uniform(0.1, 2)),
        decision_mode="dkd" if rng.random() < 0.5 else "kl",
        multi_teacher=MultiTeacherParams(policy=WeightPolicy("entropy", tau=float(rng.uniform(0.1, 2)))))
    teachers = [TeacherOutput(rng.normal(scale=2, size=(B, C, P + 1)), rng.normal(size=(B, D + 1, P + 1)),
                              (rng.normal(size=(B, H, P + 1)),)) for _ in range(2)]
    bank = TeacherBank(teachers, num_parts=P)
    w = teacher_weights(bank, hp.soft, hp.multi_teacher.policy)
    emb_signs = sign_vote(bank, w, dim=D)
    layer_signs = sign_vote(bank, w, dim=H, layer=0)
    logits = rng.normal(scale=2, size=(B, C, P))
    emb = _away_from_margin(_triplet_safe(rng, (B, D, P), hp.base.m_tri), emb_signs, hp.boundary.m)
    layer = _away_from_margin(rng.normal(scale=1.5, size=(B, H, P)), layer_signs, hp.boundary.m)
    sizes = np.cumsum([logits.size, emb.size])
    x = np.concatenate([logits.ravel(), emb.ravel(), layer.ravel()])

    def f(v):
        out = StudentOutputs(gc.reshape(v[:sizes[0]], logits.shape), gc.reshape(v[sizes[0]:sizes[1]], emb.shape),
                             (gc.reshape(v[sizes[1]:], layer.shape),))
        return total_loss(out, LABELS, teachers, hp).loss

    return f, x


REGISTRY = [
    GradCase("ce", _ce),
    GradCase("triplet", _triplet),
    GradCase("kl", _kl),
    GradCase("tckd", _tckd),
    GradCase("nckd", _nckd),
    GradCase("dkd", _dkd),
    GradCase("naive_kd", _naive),
    GradCase("ab", _ab),
    GradCase("ab_multilayer", _ab_multilayer),
    GradCase("logit_mse", _logit_mse),
    GradCase("feature_mse", _feature_mse),
    GradCase("total", _total, tol=1e-4, directions=12),
]


@dataclass
class AuditRow:
    name: str
    points: int
    failures: int
    max_rel_err: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.failures == 0


def run_audit(points=100, seed=0, eps=1e-6, names=None):
    rows = []
    for case in REGISTRY:
        if names is not None and case.name not in names:
            continue
        rng = np.random.default_rng([seed, len(case.name), sum(map(ord, case.name))])
        t0 = time.perf_counter()
        failures, worst = 0, 0.0
        for _ in range(points):
            f, x = case.make(rng)
            if case.directions:
                rep = gc.check_directional(f, x, case.directions, eps=eps, tol=case.tol, rng=rng)
            else:
                rep = gc.check_gradient(f, x, eps=eps, tol=case.tol)
            worst = max(worst, float(np.max(np.abs(rep.analytic - rep.numeric)
                                            / np.maximum(np.maximum(np.abs(rep.analytic), np.abs(rep.numeric)), 1.0))))
            failures += not rep.passed
        rows.append(AuditRow(case.name, points, failures, worst, case.tol, time.perf_counter() - t0))
    return rows
