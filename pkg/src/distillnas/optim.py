"""SGD with Nesterov momentum, weight decay, and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class SgdState:
    """Per-parameter velocity buffers plus the scalar hyperparameters.

    Velocities are allocated lazily per parameter identity, so one state can
    drive disjoint parameter subsets (shared-pool training updates only the
    sampled architecture's view).
    """

    def __init__(
        self,
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        nesterov: bool = True,
    ):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.nesterov = bool(nesterov)
        # id(param) -> (param ref, velocity); holding the ref keeps ids stable
        self._velocity: dict[int, tuple[Tensor, np.ndarray]] = {}

    def velocity_for(self, p: Tensor) -> np.ndarray:
        entry = self._velocity.get(id(p))
        if entry is None:
            v = np.zeros_like(p.data)
            self._velocity[id(p)] = (p, v)
            return v
        return entry[1]


def sgd_step(params, grads, state: SgdState):
    """One SGD update in place; returns the (mutated) parameter list.

    Weight decay enters the gradient (g += wd * p) before the momentum update.
    Velocity: v <- mu * v - lr * g; Nesterov applies p <- p + mu * v - lr * g,
    plain momentum applies p <- p + v.
    """
    params = list(params)
    if isinstance(grads, dict):
        grad_list = [grads[p] for p in params]
    else:
        grad_list = list(grads)
        if len(grad_list) != len(params):
            raise ValueError(f"{len(grad_list)} grads for {len(params)} params")
    for p, g in zip(params, grad_list):
        g_arr = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g_arr.shape != p.data.shape:
            raise ShapeError(
                f"sgd_step: grad shape {g_arr.shape} != param shape {p.data.shape}"
            )
        if state.weight_decay != 0.0:
            g_arr = g_arr + state.weight_decay * p.data
        v = state.velocity_for(p)
        if v.shape != p.data.shape:
            raise ShapeError(
                f"sgd_step: velocity shape {v.shape} != param shape {p.data.shape}"
            )
        v *= state.momentum
        v -= state.lr * g_arr
        if state.nesterov:
            p.data += state.momentum * v - state.lr * g_arr
        else:
            p.data += v
    return params


@dataclass(frozen=True)
class TrainSchedule:
    """Step schedule: base lr divided by 10 at each milestone epoch, with an
    optional warm-up phase at a lower lr for the first iterations."""

    epochs: int
    batch_size: int = 128
    base_lr: float = 0.1
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    warmup_iters: int = 0
    warmup_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def lr_at(self, epoch: int, global_iter: int) -> float:
        if global_iter < self.warmup_iters:
            return self.warmup_lr
        lr = self.base_lr
        for m in self.milestones:
            if epoch >= m:
                lr *= self.gamma
        return lr


def default_milestones(epochs: int) -> tuple[int, int]:
    """Scale the 150/225-of-300 drop points to an arbitrary epoch budget."""
    return (epochs * 150 // 300, epochs * 225 // 300)
