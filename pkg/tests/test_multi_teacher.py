import numpy as np
import pytest

from gaitkd.distill_decision import SoftDistParams, kl_loss, teacher_log_probs
from gaitkd.distill_boundary import ab_loss, teacher_signs
from gaitkd.errors import ConfigError, ShapeError
from gaitkd.multi_teacher import (TeacherBank, TeacherOutput, WeightPolicy, ensemble_distribution,
                                  ensemble_log_distribution, entropy, mean_teacher_loss, sign_vote,
                                  strongest_teacher_select, strongest_teacher_signs, teacher_weights)
from gaitkd.objective import HyperParams, StudentOutputs, total_loss


def _teacher(rng, B=3, C=5, P=4, D=6, scale=2.0):
    return TeacherOutput(rng.normal(scale=scale, size=(B, C, P)), rng.normal(size=(B, D, P)))


def test_bank_crops_to_common_parts(rng):
    bank = TeacherBank([_teacher(rng, P=4), _teacher(rng, P=6)], num_parts=5)
    assert bank.P == 4 and len(bank) == 2
    assert bank.logits_shape == (3, 5, 4)
    with pytest.raises(ShapeError):
        TeacherBank([_teacher(rng, C=5), _teacher(rng, C=6)])
    with pytest.raises(ConfigError):
        TeacherBank([])


def test_weights_are_distributions(rng):
    bank = TeacherBank([_teacher(rng) for _ in range(3)])
    w = teacher_weights(bank, SoftDistParams(T=2))
    assert w.shape == (3, 3, 4)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-15)
    np.testing.assert_array_equal(teacher_weights(bank, policy=WeightPolicy("uniform")), 1 / 3)


def test_single_teacher_paths_reduce_exactly(rng):
    t = _teacher(rng, B=4)
    bank = TeacherBank([t])
    p = SoftDistParams(T=2.0, alpha=1.5)
    w = teacher_weights(bank, p)
    np.testing.assert_array_equal(w, 1.0)
    log_q = ensemble_log_distribution(bank, p)
    np.testing.assert_allclose(log_q, teacher_log_probs(t.logits, p), atol=1e-12, rtol=0)
    np.testing.assert_array_equal(sign_vote(bank, w), teacher_signs(t.emb))
    np.testing.assert_array_equal(strongest_teacher_signs(bank, w), teacher_signs(t.emb))
    s_logits, s_emb = rng.normal(size=(4, 5, 4)), rng.normal(size=(4, 6, 4))
    hp = HyperParams(soft=p)
    multi = total_loss(StudentOutputs(s_logits, s_emb), np.array([0, 0, 1, 1]), bank, hp)
    single = kl_loss(s_logits, t.logits, p), ab_loss(s_emb, t.emb, hp.boundary.m)
    assert abs(multi.decision - single[0]) < 1e-12
    assert abs(multi.feature - single[1]) < 1e-12
    mt = mean_teacher_loss(s_logits, s_emb, bank, p, m=hp.boundary.m)
    assert abs(mt - (single[0] + single[1])) < 1e-12


def test_entropy_weights_approach_uniform_at_small_tau(rng):
    bank = TeacherBank([_teacher(rng) for _ in range(4)])
    w = teacher_weights(bank, policy=WeightPolicy("entropy", tau=1e-8))
    assert np.max(np.abs(w - 0.25)) < 1e-6


def test_confident_teacher_weight_grows_with_tau(rng):
    bank = TeacherBank([_teacher(rng, scale=s) for s in (0.5, 3.0, 1.0)])
    H = np.stack([entropy(teacher_log_probs(o.logits, SoftDistParams())) for o in bank])
    sharpest = np.argmin(H, axis=0)
    prev = None
    for tau in np.linspace(0.01, 20, 60):
        w = teacher_weights(bank, policy=WeightPolicy("entropy", tau=float(tau)))
        w_min = np.take_along_axis(w, sharpest[None], axis=0)[0]
        if prev is not None:
            assert np.all(w_min >= prev - 1e-15)
        prev = w_min


def test_ensemble_is_a_distribution(rng):
    bank = TeacherBank([_teacher(rng) for _ in range(3)])
    q = ensemble_distribution(bank, SoftDistParams(T=3))
    assert q.shape == (3, 5, 4)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_sign_vote_majority_and_ties():
    pos, neg = np.ones((1, 1, 1)), -np.ones((1, 1, 1))
    logits = np.zeros((1, 2, 1))
    bank = TeacherBank([TeacherOutput(logits, pos), TeacherOutput(logits, pos), TeacherOutput(logits, neg)])
    w = np.full((3, 1, 1), 1 / 3)
    assert sign_vote(bank, w)[0, 0, 0] == 1.0
    tie = TeacherBank([TeacherOutput(logits, pos), TeacherOutput(logits, neg)])
    assert sign_vote(tie, np.full((2, 1, 1), 0.5))[0, 0, 0] == -1.0
    with pytest.raises(ShapeError):
        sign_vote(tie, np.ones((3, 1, 1)))


def test_strongest_teacher_prefers_lowest_index_on_ties():
    w = np.array([[[0.5, 0.2]], [[0.5, 0.8]]])
    np.testing.assert_array_equal(strongest_teacher_select(None, w), [[0, 1]])


def test_vote_with_unequal_dims_needs_crop(rng):
    bank = TeacherBank([_teacher(rng, D=4), _teacher(rng, D=6)])
    w = teacher_weights(bank)
    with pytest.raises(ShapeError):
        sign_vote(bank, w)
    assert sign_vote(bank, w, dim=4).shape == (3, 4, 4)
