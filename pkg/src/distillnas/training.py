"""Generic training loop shared by teacher members, students, and retraining.

Loss kinds: "ce" (labels only), "kd" (distill against the ensemble-mean
logits), "od" (oracle distillation against correct-member averages).
Teacher supervision comes from a cached logit array aligned with the train
split, so KD/OD runs never re-execute the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .data import DataBundle, augment_batch, batch_indices
from .nn import Network, accuracy, predict_logits
from .optim import DivergenceError, SgdState, TrainSchedule, sgd_step
from .tensor import Tape, Tensor, backward

LOSS_KINDS = ("ce", "kd", "od")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # one dict per epoch
    test_acc: float = 0.0
    val_acc: float = 0.0
    train_acc: float = 0.0


def compute_loss(kind, logits, labels, member_logits, distill):
    if kind == "ce":
        return losses.cross_entropy(logits, labels)
    if member_logits is None:
        raise ValueError(f"loss kind {kind!r} needs cached teacher member logits")
    if kind == "kd":
        return losses.kd_loss(logits, member_logits.mean(axis=0), labels, distill)
    if kind == "od":
        return losses.od_loss(logits, member_logits, labels, distill)
    raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")


def train_model(
    net: Network,
    bundle: DataBundle,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    loss_kind: str = "ce",
    distill: losses.DistillConfig | None = None,
    member_logits: np.ndarray | None = None,
    eval_batch: int = 256,
    log=None,
) -> TrainResult:
    """Train in place; returns per-epoch history plus final accuracies.

    member_logits, when given, is [n_members, n_train, n_classes] aligned
    with bundle.train_x row order (cached, clean-image teacher outputs).
    """
    if loss_kind != "ce" and distill is None:
        raise ValueError("kd/od training needs a DistillConfig")
    if member_logits is not None and member_logits.shape[1] != len(bundle.train_y):
        raise ValueError(
            f"member logits cover {member_logits.shape[1]} examples, "
            f"train split has {len(bundle.train_y)}"
        )
    params = net.params()
    state = SgdState(
        schedule.base_lr,
        momentum=schedule.momentum,
        weight_decay=schedule.weight_decay,
    )
    result = TrainResult()
    global_iter = 0
    for epoch in range(schedule.epochs):
        loss_sum = 0.0
        correct = 0
        seen = 0
        for idx in batch_indices(rng, len(bundle.train_y), schedule.batch_size):
            x = bundle.train_x[idx]
            y = bundle.train_y[idx]
            if bundle.augment:
                x = augment_batch(rng, x)
            mlog = member_logits[:, idx] if member_logits is not None else None
            state.lr = schedule.lr_at(epoch, global_iter)
            with Tape() as tape:
                logits = net.forward(Tensor(x), mode="train")
                loss = compute_loss(loss_kind, logits, y, mlog, distill)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite {loss_kind} loss {value!r} at epoch {epoch} iter {global_iter}"
                )
            grads = backward(tape, loss, params)
            sgd_step(params, grads, state)
            loss_sum += value * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
            global_iter += 1
        val_acc = accuracy(predict_logits(net, bundle.val_x, eval_batch), bundle.val_y)
        row = {
            "epoch": epoch,
            "lr": state.lr,
            "train_loss": loss_sum / seen,
            "train_acc": correct / seen,
            "val_acc": val_acc,
        }
        result.history.append(row)
        if log is not None:
            log(
                f"epoch {epoch:3d} lr {row['lr']:.4f} "
                f"loss {row['train_loss']:.4f} train {row['train_acc']:.3f} val {val_acc:.3f}"
            )
    result.train_acc = result.history[-1]["train_acc"] if result.history else 0.0
    result.val_acc = result.history[-1]["val_acc"] if result.history else 0.0
    result.test_acc = accuracy(predict_logits(net, bundle.test_x, eval_batch), bundle.test_y)
    return result
