import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gaitkd import gradcore as gc
from gaitkd.distill_decision import (DkdParams, SoftDistParams, collapse_binary, dkd_loss,
                                     kl_grad_closed_form, kl_loss, logit_mse_loss, masked_soften,
                                     naive_kd_loss, nckd_loss, soften, tckd_loss)
from gaitkd.errors import ConfigError, LabelError, ShapeError


def _instance(rng, B=None, C=None, P=None, scale=2.0):
    B = B or int(rng.integers(1, 5))
    C = C or int(rng.integers(2, 7))
    P = P or int(rng.integers(1, 4))
    return (rng.normal(scale=scale, size=(B, C, P)), rng.normal(scale=scale, size=(B, C, P)),
            rng.integers(0, C, size=B))


def _params(rng):
    return SoftDistParams(T=float(rng.uniform(0.5, 4)), alpha=float(rng.uniform(0.5, 2)))


def test_soften_rows_sum_to_one(rng):
    q = soften(rng.normal(size=(3, 4, 2)), SoftDistParams(T=3))
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-15)


def test_identical_logits_give_zero(rng):
    s, _, y = _instance(rng)
    assert kl_loss(s, s) == 0.0
    assert tckd_loss(s, s, y) == pytest.approx(0.0, abs=1e-15)
    assert nckd_loss(s, s, y) == pytest.approx(0.0, abs=1e-15)


def test_kl_two_class_example():
    s = np.zeros((1, 2, 1))
    t = np.array([[[math.log(3.0)], [0.0]]])  # teacher softmax [0.75, 0.25]
    expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert kl_loss(s, t) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("loss", ["kl", "tckd", "nckd"])
def test_matches_loop_oracle(rng, loss):
    for _ in range(60):
        s, t, y = _instance(rng)
        p = _params(rng)
        if loss == "kl":
            got, ref = kl_loss(s, t, p), oracles.kl(s.tolist(), t.tolist(), p.T, p.alpha)
        elif loss == "tckd":
            got, ref = tckd_loss(s, t, y, p), oracles.tckd(s.tolist(), t.tolist(), y.tolist(), p.T, p.alpha)
        else:
            got, ref = nckd_loss(s, t, y, p), oracles.nckd(s.tolist(), t.tolist(), y.tolist(), p.T, p.alpha)
        assert abs(got - ref) < 1e-12


def test_closed_form_gradient_matches_tape(rng):
    for _ in range(100):
        s, t, _ = _instance(rng)
        p = _params(rng)
        _, g = gc.analytic_grad(lambda v: kl_loss(v, t, p), s)
        assert np.max(np.abs(g - kl_grad_closed_form(s, t, p))) <= 1e-10


def test_kl_gradient_matches_finite_differences(rng):
    s, t, _ = _instance(rng, 3, 5, 2)
    assert gc.check_gradient(lambda v: kl_loss(v, t, SoftDistParams(T=2.0)), s).passed


def test_duplicating_parts_keeps_kl(rng):
    s, t, _ = _instance(rng)
    dup = kl_loss(np.concatenate([s, s], 2), np.concatenate([t, t], 2), SoftDistParams(T=2))
    assert abs(dup - kl_loss(s, t, SoftDistParams(T=2))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.25, 4.0))
def test_joint_rescaling_scales_by_c_squared(seed, c):
    rng = np.random.default_rng(seed)
    s, t, y = _instance(rng)
    p = _params(rng)
    q = SoftDistParams(T=c * p.T, alpha=c * p.alpha)
    for f in (lambda pp: kl_loss(s, t, pp), lambda pp: tckd_loss(s, t, y, pp),
              lambda pp: nckd_loss(s, t, y, pp)):
        assert abs(f(q) - c * c * f(p)) <= 1e-12 * max(1.0, c * c * f(p))


def test_collapse_examples(rng):
    np.testing.assert_allclose(collapse_binary(np.full(4, 0.25), 2), [0.25, 0.75])
    np.testing.assert_array_equal(collapse_binary(np.eye(5)[1], 1), [1.0, 0.0])
    q = rng.dirichlet(np.ones(6))
    b = collapse_binary(q, 3)
    assert abs(b[1] - (1 - q[3])) <= 1e-15
    with pytest.raises(LabelError):
        collapse_binary(q, 6)


def test_tckd_ignores_non_target_structure(rng):
    t = rng.normal(size=(2, 5, 1))
    y = np.array([1, 3])
    s = t.copy()
    # rearrange non-target logits while keeping each row's non-target log-mass
    for i, yi in enumerate(y):
        others = [c for c in range(5) if c != yi]
        s[i, others, 0] = t[i, others[::-1], 0]
    assert tckd_loss(s, t, y) == pytest.approx(0.0, abs=1e-12)


def test_nckd_ignores_target_logit(rng):
    t = rng.normal(size=(3, 4, 2))
    y = np.array([0, 2, 3])
    s = t.copy()
    s[np.arange(3), y, :] += 5.0
    assert nckd_loss(s, t, y) == pytest.approx(0.0, abs=1e-12)


def test_masked_soften_examples(rng):
    q = masked_soften(np.zeros((1, 3, 1)), np.array([0]))
    np.testing.assert_array_equal(q[0, :, 0], [0.0, 0.5, 0.5])
    Z = rng.normal(size=(3, 5, 2))
    y = np.array([4, 0, 2])
    exact = masked_soften(Z, y, SoftDistParams(T=2.0))
    np.testing.assert_allclose(masked_soften(Z, y, SoftDistParams(T=2.0), gamma=50.0), exact, atol=1e-12, rtol=0)
    np.testing.assert_allclose(exact.sum(axis=1), 1.0, atol=1e-15)
    full = soften(Z, SoftDistParams(T=2.0))
    for i, yi in enumerate(y):
        others = [c for c in range(5) if c != yi]
        renorm = full[i, others] / full[i, others].sum(axis=0)
        np.testing.assert_allclose(exact[i, others], renorm, atol=1e-12, rtol=0)


def test_finite_gamma_nckd_agrees_with_exact(rng):
    s, t, y = _instance(rng, 3, 5, 2)
    assert abs(nckd_loss(s, t, y, gamma=60.0) - nckd_loss(s, t, y)) < 1e-10


def test_dkd_weights(rng):
    s, t, y = _instance(rng)
    tck = tckd_loss(s, t, y)
    assert dkd_loss(s, t, y, dkd=DkdParams(alpha_d=1, beta_d=0)).total == pytest.approx(tck, abs=1e-15)
    assert dkd_loss(s, t, y, dkd=DkdParams(alpha_d=0, beta_d=0)).total == 0.0
    out = dkd_loss(s, t, y, dkd=DkdParams(alpha_d=0.5, beta_d=2.0))
    assert out.total == pytest.approx(0.5 * out.tckd + 2.0 * out.nckd, abs=1e-14)


def test_decomposition_identity(rng):
    """KL = TCKD + sum over (i, p) of teacher non-target mass times the per-(i, p) NCKD."""
    for _ in range(20):
        B, C, P = 2, 4, 2
        s, t, y = _instance(rng, B, C, P)
        p = _params(rng)
        qt = soften(t, p)
        weighted = 0.0
        for i in range(B):
            for j in range(P):
                w = 1.0 - qt[i, y[i], j]
                cell = nckd_loss(s[i:i + 1, :, j:j + 1], t[i:i + 1, :, j:j + 1], y[i:i + 1], p)
                weighted += w * cell / (B * P)
        assert abs(kl_loss(s, t, p) - (tckd_loss(s, t, y, p) + weighted)) < 1e-10


def test_naive_kd_pools_parts(rng):
    s, t, _ = _instance(rng, 3, 4, 3)
    ref = kl_loss(s.mean(axis=2, keepdims=True), t.mean(axis=2, keepdims=True))
    assert naive_kd_loss(s, t) == pytest.approx(ref, abs=1e-15)


def test_logit_mse(rng):
    s, t, _ = _instance(rng)
    assert logit_mse_loss(s, t) == pytest.approx(np.mean((s - t) ** 2), abs=1e-15)


def test_errors(rng):
    s, t, y = _instance(rng, 2, 4, 2)
    with pytest.raises(ShapeError):
        kl_loss(s, t[:, :3])
    with pytest.raises(LabelError):
        tckd_loss(s, t, np.array([0, 4]))
    with pytest.raises(ConfigError):
        SoftDistParams(T=0.0)
    with pytest.raises(ConfigError):
        DkdParams(gamma=5.0)
    with pytest.raises(ConfigError):
        DkdParams(beta_d=-1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_are_nonnegative(seed):
    rng = np.random.default_rng(seed)
    s, t, y = _instance(rng, scale=8.0)
    for v in (kl_loss(s, t), tckd_loss(s, t, y), nckd_loss(s, t, y), dkd_loss(s, t, y).total):
        assert v >= -1e-15
