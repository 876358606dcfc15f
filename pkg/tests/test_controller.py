"""Policy sampling, log-probabilities, REINFORCE updates, and the baseline."""

import numpy as np
import pytest

from distillnas.controller import (
    BaselineState,
    ControllerPolicy,
    argmax_genome,
    baseline_converged,
    log_prob_graph,
    objective_estimate,
    reinforce_update,
    sample_architecture,
)
from distillnas.optim import SgdState
from distillnas.search_space import ArchitectureGenome, SlotLayout
from distillnas.tensor import Tape, backward


def make_policy(layout=SlotLayout((2,)), n_ops=7, hidden=8, embed_dim=4, seed=0):
    return ControllerPolicy(
        layout, "bb", np.random.default_rng(seed), hidden=hidden, embed_dim=embed_dim, n_ops=n_ops
    )


def zero_gru(policy):
    """Zero the recurrent weights so logits reduce to the head biases."""
    for p in policy.gru.values():
        p.data[...] = 0.0
    policy.start.data[...] = 0.0
    policy.op_embed.data[...] = 0.0
    policy.skip_embed.data[...] = 0.0


def test_n_decisions():
    assert make_policy(SlotLayout((2, 2))).n_decisions == 6  # 4 ops + 2 skip bits
    assert make_policy(SlotLayout((3,))).n_decisions == 6  # 3 ops + 3 skip bits


def test_initial_policy_exactly_uniform():
    # zero-initialized shared heads: every decision is uniform regardless of
    # the recurrent state
    policy = make_policy(SlotLayout((2,)))
    rng = np.random.default_rng(1)
    _, logp = sample_architecture(policy, rng)
    want = -(2 * np.log(7.0) + 1 * np.log(2.0))
    assert np.isclose(logp, want, atol=1e-12)


def test_initial_sampling_frequencies_near_uniform():
    policy = make_policy(SlotLayout((1,)))
    rng = np.random.default_rng(2)
    counts = np.zeros(7)
    n = 10_000
    for _ in range(n):
        g, _ = sample_architecture(policy, rng)
        counts[g.stage_ops[0][0]] += 1
    freqs = counts / n
    assert np.abs(freqs - 1 / 7).max() < 0.03


def test_saturated_head_samples_deterministically():
    policy = make_policy(SlotLayout((1,)))
    policy.head_op_b.data[4] = 50.0
    rng = np.random.default_rng(3)
    for _ in range(20):
        g, logp = sample_architecture(policy, rng)
        assert g.stage_ops[0][0] == 4
    assert np.isclose(logp, 0.0, atol=1e-12)
    assert argmax_genome(policy).stage_ops[0][0] == 4


def test_log_prob_graph_matches_sampled_logp():
    policy = make_policy(SlotLayout((2, 2)), seed=4)
    rng = np.random.default_rng(5)
    for _ in range(5):
        g, logp = sample_architecture(policy, rng)
        graph_logp, _ = log_prob_graph(policy, g)
        assert np.isclose(float(graph_logp.data), logp, atol=1e-12)


def test_logp_scalar_oracle_with_zeroed_gru():
    # with zero recurrence, each decision's logits equal the head bias
    policy = make_policy(SlotLayout((1,)), n_ops=3)
    zero_gru(policy)
    policy.head_op_b.data[:] = [1.0, 0.0, -1.0]
    g = ArchitectureGenome("bb", ((0,),), ((),))
    logp, _ = log_prob_graph(policy, g)
    b = np.array([1.0, 0.0, -1.0])
    want = b[0] - np.log(np.exp(b).sum())
    assert np.isclose(float(logp.data), want, atol=1e-12)


def test_argmax_genome_is_modal_choice():
    policy = make_policy(SlotLayout((2,)), seed=6)
    policy.head_op_b.data[2] = 3.0
    policy.head_skip_b.data[1] = 3.0
    g = argmax_genome(policy)
    assert g.stage_ops[0] == (2, 2)
    assert g.stage_skips[0] == (1,)


def test_grad_logp_passes_finite_differences():
    policy = make_policy(SlotLayout((2,)), hidden=4, embed_dim=3, seed=7)
    genome = ArchitectureGenome("bb", ((1, 6),), ((1,),))
    params = policy.params()
    with Tape() as tape:
        logp, _ = log_prob_graph(policy, genome)
    grads = backward(tape, logp, params)

    eps = 1e-6
    rng = np.random.default_rng(8)
    for name, p in policy._named:
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(log_prob_graph(policy, genome)[0].data)
            flat[i] = orig - eps
            dn = float(log_prob_graph(policy, genome)[0].data)
            flat[i] = orig
            fd = (up - dn) / (2 * eps)
            an = grads[p].data.reshape(-1)[i]
            assert abs(fd - an) / max(1.0, abs(an)) < 1e-5, (name, i)


def test_single_sample_reinforce_matches_manual_gradient():
    # zeroed GRU, momentum-free SGD: the head-bias update must be exactly
    # lr * (R - b) * (onehot - softmax(bias))
    policy = make_policy(SlotLayout((1,)), n_ops=2)
    zero_gru(policy)
    g = ArchitectureGenome("bb", ((0,),), ((),))
    baseline = BaselineState(beta=0.5)
    sgd = SgdState(0.1, momentum=0.0, weight_decay=0.0, nesterov=False)
    mean_r = reinforce_update(policy, [(g, 1.0)], baseline, sgd)
    assert mean_r == 1.0
    want = 0.1 * 1.0 * (np.array([1.0, 0.0]) - np.array([0.5, 0.5]))
    assert np.allclose(policy.head_op_b.data, want, atol=1e-12)
    # baseline folded in only after the gradient: first update used b=0 and
    # then initialized to the observed reward
    assert baseline.initialized and baseline.value == 1.0


def test_reinforce_baseline_reduces_step_size():
    def bias_delta(baseline):
        policy = make_policy(SlotLayout((1,)), n_ops=2)
        zero_gru(policy)
        g = ArchitectureGenome("bb", ((0,),), ((),))
        sgd = SgdState(0.1, momentum=0.0, weight_decay=0.0, nesterov=False)
        reinforce_update(policy, [(g, 1.0)], baseline, sgd)
        return np.abs(policy.head_op_b.data).max()

    warm = BaselineState()
    warm.update(0.9)  # close to the reward
    assert bias_delta(warm) < bias_delta(BaselineState())


def test_reinforce_rejects_empty_and_nonfinite():
    policy = make_policy()
    sgd = SgdState(0.1)
    with pytest.raises(ValueError):
        reinforce_update(policy, [], BaselineState(), sgd)
    g, _ = sample_architecture(policy, np.random.default_rng(0))
    with pytest.raises(ValueError):
        reinforce_update(policy, [(g, float("nan"))], BaselineState(), sgd)


def test_baseline_ema_arithmetic():
    b = BaselineState(beta=0.9)
    b.update(1.0)
    assert b.value == 1.0  # first observation initializes
    b.update(0.0)
    assert np.isclose(b.value, 0.9)
    b.update(0.5)
    assert np.isclose(b.value, 0.9 * 0.9 + 0.1 * 0.5)
    assert len(b.history) == 3
    with pytest.raises(ValueError):
        b.update(float("inf"))


def test_baseline_stays_in_reward_hull():
    rng = np.random.default_rng(11)
    b = BaselineState(beta=0.95)
    rewards = rng.uniform(0.2, 0.8, size=200)
    for r in rewards:
        b.update(r)
    assert 0.2 <= min(b.history) and max(b.history) <= 0.8


def test_baseline_converged_window():
    b = BaselineState(beta=0.5)
    for _ in range(30):
        b.update(0.7)
    assert baseline_converged(b, window=20, tol=1e-3)
    b2 = BaselineState(beta=0.5)
    for r in (0.0, 1.0) * 15:
        b2.update(r)
    assert not baseline_converged(b2, window=20, tol=1e-3)
    assert not baseline_converged(BaselineState(), window=20)


def test_two_arm_bandit_learns_best_arm():
    # compact version of the surrogate-bandit check (the acceptance suite
    # runs the full multi-seed protocol)
    layout = SlotLayout((1,))
    policy = make_policy(layout, n_ops=2, hidden=8, embed_dim=4, seed=12)
    rng = np.random.default_rng(13)
    baseline = BaselineState(beta=0.9)
    sgd = SgdState(0.05, momentum=0.9, weight_decay=0.0, nesterov=False)

    def reward(g):
        return 1.0 if g.stage_ops[0][0] == 0 else 0.2

    for _ in range(200):
        samples = []
        for _ in range(5):
            g, _ = sample_architecture(policy, rng)
            samples.append((g, reward(g)))
        reinforce_update(policy, samples, baseline, sgd)

    hits = sum(
        sample_architecture(policy, rng)[0].stage_ops[0][0] == 0 for _ in range(200)
    )
    assert hits / 200 > 0.8


def test_objective_estimate_uniform_policy():
    policy = make_policy(SlotLayout((1,)), n_ops=2)
    rng = np.random.default_rng(14)
    est = objective_estimate(
        policy, lambda g: 1.0 if g.stage_ops[0][0] == 0 else 0.0, 2000, rng
    )
    assert 0.45 < est < 0.55
    with pytest.raises(ValueError):
        objective_estimate(policy, lambda g: 0.0, 0, rng)


def test_save_load_round_trip(tmp_path):
    a = make_policy(SlotLayout((2,)), seed=15)
    rng = np.random.default_rng(16)
    sgd = SgdState(0.05, momentum=0.0, weight_decay=0.0, nesterov=False)
    samples = [(sample_architecture(a, rng)[0], 0.5) for _ in range(4)]
    reinforce_update(a, samples, BaselineState(), sgd)
    a.save(tmp_path / "ctrl.odtw")

    b = make_policy(SlotLayout((2,)), seed=99)
    b.load(tmp_path / "ctrl.odtw")
    ra, rb = np.random.default_rng(17), np.random.default_rng(17)
    for _ in range(10):
        ga, la = sample_architecture(a, ra)
        gb, lb = sample_architecture(b, rb)
        assert ga == gb
        assert la == lb


def test_load_rejects_shape_mismatch(tmp_path):
    a = make_policy(SlotLayout((2,)), hidden=8)
    a.save(tmp_path / "c.odtw")
    b = make_policy(SlotLayout((2,)), hidden=16)
    with pytest.raises(ValueError, match="shape"):
        b.load(tmp_path / "c.odtw")


def test_entropy_of_uniform_policy():
    policy = make_policy(SlotLayout((2,)))
    g, _ = sample_architecture(policy, np.random.default_rng(18))
    _, ent = log_prob_graph(policy, g, want_entropy=True)
    want = 2 * np.log(7.0) + 1 * np.log(2.0)
    assert np.isclose(float(ent.data), want, atol=1e-12)
