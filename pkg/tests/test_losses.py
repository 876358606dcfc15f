"""Loss values against frozen hand-computed oracles, plus structural identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillnas.gradcheck import grad_check
from distillnas.losses import (
    DistillConfig,
    cross_entropy,
    kd_loss,
    kl_distill,
    od_loss,
    oracle_target,
)
from distillnas.tensor import ShapeError, Tensor


def test_cross_entropy_frozen_value():
    # -log softmax([1,0])[0] = log(1 + e^-1)
    loss = cross_entropy(Tensor([[1.0, 0.0]]), [0])
    assert np.isclose(loss.item(), 0.31326168751822286, atol=1e-14)


def test_cross_entropy_batch_mean():
    loss = cross_entropy(Tensor([[1.0, 0.0], [0.5, 2.0]]), [0, 1])
    assert np.isclose(loss.item(), 0.2573374827504877, atol=1e-14)


def test_cross_entropy_label_validation():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy(logits, [0, 3])
    with pytest.raises(ShapeError):
        cross_entropy(logits, [0])
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros(3)), [0])


def test_kl_distill_frozen_value():
    # teacher [ln2, 0], student uniform, T=1
    loss = kl_distill(Tensor([[0.0, 0.0]]), np.array([[np.log(2.0), 0.0]]), 1.0)
    assert np.isclose(loss.item(), 0.05663301226513248, atol=1e-14)


def test_kl_self_is_zero(rng):
    x = rng.normal(size=(4, 6)) * 3
    for T in (1.0, 3.0):
        assert abs(kl_distill(Tensor(x), x, T).item()) < 1e-12


def test_kl_nonnegative(rng):
    s = rng.normal(size=(8, 5))
    t = rng.normal(size=(8, 5))
    assert kl_distill(Tensor(s), t, 3.0).item() >= 0.0


def test_kl_temperature_scaling_identity(rng):
    # T^2 * KL(p_T || q_T) == T^2 * [KL at T=1 of the pre-divided logits]
    s = rng.normal(size=(3, 4))
    t = rng.normal(size=(3, 4))
    T = 2.5
    a = kl_distill(Tensor(s), t, T).item()
    b = T * T * kl_distill(Tensor(s / T), t / T, 1.0).item()
    assert np.isclose(a, b, atol=1e-12)


def test_kl_rejects_bad_temperature_and_shapes(rng):
    s = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="temperature"):
        kl_distill(s, np.zeros((2, 3)), 0.0)
    with pytest.raises(ShapeError):
        kl_distill(s, np.zeros((2, 4)), 1.0)


def test_kd_loss_balance_endpoints(rng):
    s = rng.normal(size=(5, 4))
    t = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, 5)
    ce = cross_entropy(Tensor(s), y).item()
    kl = kl_distill(Tensor(s), t, 3.0).item()
    assert np.isclose(kd_loss(Tensor(s), t, y, DistillConfig(3.0, 1.0)).item(), ce, atol=1e-12)
    assert np.isclose(kd_loss(Tensor(s), t, y, DistillConfig(3.0, 0.0)).item(), kl, atol=1e-12)
    mid = kd_loss(Tensor(s), t, y, DistillConfig(3.0, 0.25)).item()
    assert np.isclose(mid, 0.25 * ce + 0.75 * kl, atol=1e-12)


def test_distill_config_validation():
    with pytest.raises(ValueError, match="temperature"):
        DistillConfig(temperature=0.5)
    with pytest.raises(ValueError, match="balance"):
        DistillConfig(balance=1.5)


# -- oracle target ----------------------------------------------------------


def test_oracle_target_hand_case():
    # N=2, B=3, C=2; member0 correct on ex0 only, member1 on ex0+ex1, none on ex2
    m = np.array(
        [
            [[2.0, 0.0], [3.0, 1.0], [5.0, 0.0]],
            [[4.0, 1.0], [0.0, 1.0], [2.0, 0.0]],
        ]
    )
    y = np.array([0, 1, 1])
    tgt = oracle_target(m, y)
    assert tgt.mask.tolist() == [[True, True], [False, True], [False, False]]
    assert tgt.has_target.tolist() == [True, True, False]
    assert np.allclose(tgt.target_logits[0], [3.0, 0.5])  # mean of both members
    assert np.allclose(tgt.target_logits[1], [0.0, 1.0])  # member1 alone
    assert np.allclose(tgt.target_logits[2], 0.0)


def test_oracle_target_tie_counts_as_incorrect():
    m = np.array([[[1.0, 1.0]]])  # tied top at the label
    tgt = oracle_target(m, np.array([0]))
    assert not tgt.mask[0, 0]
    assert not tgt.has_target[0]


def test_oracle_target_shape_checks():
    with pytest.raises(ShapeError):
        oracle_target(np.zeros((3, 2)), np.zeros(3, dtype=int))
    with pytest.raises(ShapeError):
        oracle_target(np.zeros((1, 3, 2)), np.zeros(4, dtype=int))


# -- od loss -----------------------------------------------------------------


def test_od_equals_ce_when_no_member_correct(rng):
    s = rng.normal(size=(6, 4))
    y = rng.integers(0, 4, 6)
    # every member predicts a uniform tie: never counted correct
    m = np.zeros((3, 6, 4))
    got = od_loss(Tensor(s), m, y, DistillConfig(3.0, 0.0)).item()
    want = cross_entropy(Tensor(s), y).item()
    assert np.isclose(got, want, atol=1e-12)


def test_od_equals_kd_on_mean_when_all_correct(rng):
    y = rng.integers(0, 4, 6)
    s = rng.normal(size=(6, 4))
    # make every member confidently correct everywhere
    m = rng.normal(size=(3, 6, 4))
    for j in range(3):
        m[j, np.arange(6), y] = 10.0 + rng.random(6)
    for lam in (0.0, 0.3, 1.0):
        cfg = DistillConfig(3.0, lam)
        got = od_loss(Tensor(s), m, y, cfg).item()
        want = kd_loss(Tensor(s), m.mean(axis=0), y, cfg).item()
        assert np.isclose(got, want, atol=1e-12), lam


def test_od_mixed_mask_frozen_values():
    # N=1 member: correct on ex0, wrong on ex1 (see hand computation)
    s = Tensor([[0.2, -0.1], [0.0, 0.5]])
    m = np.array([[[1.0, 0.0], [3.0, 2.0]]])
    y = np.array([0, 1])
    got = od_loss(s, m, y, DistillConfig(3.0, 0.0)).item()
    assert np.isclose(got, 0.2671470931042147, atol=1e-14)
    got4 = od_loss(s, m, y, DistillConfig(3.0, 0.4)).item()
    assert np.isclose(got4, 0.3659747015922556, atol=1e-14)


def test_od_gradients_pass_finite_differences(rng):
    y = np.array([0, 2, 1, 3])
    m = rng.normal(size=(3, 4, 4))
    m[0, 0, 0] = 8.0  # ex0 covered
    cfg = DistillConfig(3.0, 0.3)
    err = grad_check(lambda t: od_loss(t, m, y, cfg), Tensor(rng.normal(size=(4, 4))))
    assert err < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 3.0]))
def test_od_batch_permutation_invariance(seed, T):
    rng = np.random.default_rng(seed)
    b, c, n = 6, 4, 3
    s = rng.normal(size=(b, c))
    m = rng.normal(size=(n, b, c)) * 2
    y = rng.integers(0, c, b)
    cfg = DistillConfig(T, 0.2)
    base = od_loss(Tensor(s), m, y, cfg).item()
    perm = rng.permutation(b)
    permuted = od_loss(Tensor(s[perm]), m[:, perm], y[perm], cfg).item()
    assert np.isclose(base, permuted, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_od_member_order_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(5, 3))
    m = rng.normal(size=(4, 5, 3))
    y = rng.integers(0, 3, 5)
    cfg = DistillConfig(3.0, 0.0)
    base = od_loss(Tensor(s), m, y, cfg).item()
    shuffled = od_loss(Tensor(s), m[::-1], y, cfg).item()
    assert np.isclose(base, shuffled, atol=1e-12)


def test_od_single_always_correct_member_is_kd_to_it(rng):
    y = rng.integers(0, 3, 6)
    m = rng.normal(size=(1, 6, 3))
    m[0, np.arange(6), y] = 9.0
    s = rng.normal(size=(6, 3))
    cfg = DistillConfig(2.0, 0.0)
    got = od_loss(Tensor(s), m, y, cfg).item()
    want = kl_distill(Tensor(s), m[0], 2.0).item()
    assert np.isclose(got, want, atol=1e-12)
