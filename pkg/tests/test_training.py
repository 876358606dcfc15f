"""The shared training loop: losses, schedule wiring, augmentation, errors."""

import numpy as np
import pytest

from distillnas.backbone import build_network
from distillnas.losses import DistillConfig
from distillnas.optim import DivergenceError, TrainSchedule, default_milestones
from distillnas.tensor import Tensor
from distillnas.training import compute_loss, train_model

from helpers import tiny_spec, toy_bundle

SPEC = tiny_spec()


def fresh_net(seed=0):
    return build_network(SPEC, np.random.default_rng(seed))


def small_schedule(epochs=4, **kw):
    kw.setdefault("batch_size", 32)
    kw.setdefault("base_lr", 0.05)
    kw.setdefault("milestones", default_milestones(epochs))
    kw.setdefault("weight_decay", 1e-4)
    return TrainSchedule(epochs=epochs, **kw)


def test_ce_training_learns_and_logs_history():
    # constant lr: milestone behaviour is asserted separately, and stale
    # momentum right after a drop makes tiny-scale accuracy dip
    bundle = toy_bundle(separation=2.5)
    res = train_model(
        fresh_net(), bundle, small_schedule(6, milestones=()), np.random.default_rng(1)
    )
    assert len(res.history) == 6
    assert res.history[0]["train_loss"] > res.history[-1]["train_loss"]
    assert res.train_acc > 0.9
    assert res.test_acc > 0.5
    row = res.history[0]
    assert set(row) == {"epoch", "lr", "train_loss", "train_acc", "val_acc"}
    assert res.val_acc == res.history[-1]["val_acc"]


def test_history_lr_follows_schedule():
    bundle = toy_bundle()
    sched = small_schedule(6, milestones=(2, 4), warmup_iters=2, warmup_lr=0.007)
    res = train_model(fresh_net(), bundle, sched, np.random.default_rng(2))
    lrs = [row["lr"] for row in res.history]
    # epoch rows record the lr of the last batch of that epoch; 96 train
    # examples at batch 32 = 3 iters per epoch, so warmup ends inside epoch 0
    assert lrs[0] == pytest.approx(0.05)
    assert lrs[1] == pytest.approx(0.05)
    assert lrs[2] == pytest.approx(0.005)
    assert lrs[4] == pytest.approx(0.0005)


def test_warmup_lr_used_for_first_iters():
    bundle = toy_bundle()
    sched = small_schedule(1, milestones=(), warmup_iters=100, warmup_lr=0.003)
    res = train_model(fresh_net(), bundle, sched, np.random.default_rng(3))
    assert res.history[0]["lr"] == pytest.approx(0.003)


def test_same_rng_reproduces_bitwise():
    bundle = toy_bundle()
    r1 = train_model(fresh_net(5), bundle, small_schedule(3), np.random.default_rng(7))
    r2 = train_model(fresh_net(5), bundle, small_schedule(3), np.random.default_rng(7))
    assert r1.test_acc == r2.test_acc
    assert r1.history == r2.history


def test_kd_and_od_need_distill_config():
    bundle = toy_bundle()
    with pytest.raises(ValueError, match="DistillConfig"):
        train_model(fresh_net(), bundle, small_schedule(1), np.random.default_rng(0), loss_kind="kd")


def test_member_logits_length_checked():
    bundle = toy_bundle()
    bad = np.zeros((2, 10, SPEC.num_classes))
    with pytest.raises(ValueError, match="cover 10 examples"):
        train_model(
            fresh_net(),
            bundle,
            small_schedule(1),
            np.random.default_rng(0),
            loss_kind="kd",
            distill=DistillConfig(temperature=3.0, balance=0.0),
            member_logits=bad,
        )


def test_kd_od_training_runs_with_cached_logits():
    bundle = toy_bundle(separation=2.5)
    n = len(bundle.train_y)
    rng = np.random.default_rng(11)
    # teacher logits that confidently point at the labels
    members = rng.normal(size=(3, n, SPEC.num_classes))
    members[:, np.arange(n), bundle.train_y] += 4.0
    dc = DistillConfig(temperature=3.0, balance=0.0)
    for kind in ("kd", "od"):
        # 8 epochs: eval-mode accuracy lags train accuracy here because the
        # batch-norm running stats need a couple dozen iterations to settle
        res = train_model(
            fresh_net(13),
            bundle,
            small_schedule(8, milestones=()),
            np.random.default_rng(13),
            loss_kind=kind,
            distill=dc,
            member_logits=members,
        )
        assert res.test_acc > 0.8, kind


def test_divergence_raises_on_nonfinite_loss():
    # batch norm and max-subtracted softmax keep pure lr blowups finite, so
    # the guard is exercised the way it fires in practice: bad input data
    bundle = toy_bundle()
    bundle.train_x[0, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError, match="non-finite"):
        train_model(fresh_net(), bundle, small_schedule(3, milestones=()), np.random.default_rng(1))


def test_augment_path_trains_and_is_seeded():
    bundle = toy_bundle()
    bundle.augment = True
    r1 = train_model(fresh_net(17), bundle, small_schedule(3), np.random.default_rng(19))
    r2 = train_model(fresh_net(17), bundle, small_schedule(3), np.random.default_rng(19))
    assert r1.history == r2.history
    assert np.isfinite(r1.history[-1]["train_loss"])


def test_compute_loss_dispatch_errors():
    logits = Tensor(np.zeros((2, 3)))
    labels = np.array([0, 1])
    with pytest.raises(ValueError, match="needs cached teacher member logits"):
        compute_loss("kd", logits, labels, None, DistillConfig(3.0, 0.0))
    with pytest.raises(ValueError, match="unknown loss kind"):
        compute_loss("mse", logits, labels, np.zeros((1, 2, 3)), DistillConfig(3.0, 0.0))
