"""Recurrent stochastic policy over genomes, trained with REINFORCE.

Decisions are emitted stage-major, op choices first and then that stage's
skip bits in (a, b) lexicographic pair order; each decision conditions on
the previous choice's embedding through a single GRU cell.  Output heads
are shared per decision type (one 7-way op head, one 2-way skip head) and
start at zero, so the initial policy is exactly uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import (
    add,
    affine,
    dense,
    embed,
    log_softmax,
    mul,
    select_scalar,
    sigmoid,
    softmax,
    sum_all,
    tanh,
)
from .optim import SgdState, sgd_step
from .search_space import ArchitectureGenome, NUM_OPS, SlotLayout
from .serialize import load_tensors, save_tensors
from .tensor import Tape, Tensor, backward


@dataclass
class BaselineState:
    """Exponential moving average of observed rewards."""

    beta: float = 0.95
    value: float = 0.0
    initialized: bool = False
    history: list = field(default_factory=list)

    def update(self, reward: float) -> None:
        if not np.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        if not self.initialized:
            self.value = float(reward)
            self.initialized = True
        else:
            self.value = self.beta * self.value + (1.0 - self.beta) * float(reward)
        self.history.append(self.value)


def update_baseline(state: BaselineState, reward: float) -> BaselineState:
    state.update(reward)
    return state


class ControllerPolicy:
    def __init__(
        self,
        layout: SlotLayout,
        backbone_id: str,
        rng: np.random.Generator,
        hidden: int = 64,
        embed_dim: int = 16,
        n_ops: int = NUM_OPS,
    ):
        if not 2 <= n_ops <= NUM_OPS:
            raise ValueError(f"n_ops must be in [2, {NUM_OPS}]")
        self.layout = layout
        self.backbone_id = backbone_id
        self.hidden = hidden
        self.n_ops = n_ops

        def u(*shape):
            return Tensor(rng.uniform(-0.1, 0.1, size=shape), requires_grad=True)

        def z(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        e, h = embed_dim, hidden
        self.op_embed = u(n_ops, e)
        self.skip_embed = u(2, e)
        self.start = u(1, e)
        self.gru = {
            "wz": u(e, h), "uz": u(h, h), "bz": z(h),
            "wr": u(e, h), "ur": u(h, h), "br": z(h),
            "wh": u(e, h), "uh": u(h, h), "bh": z(h),
        }
        self.head_op_w = z(h, n_ops)
        self.head_op_b = z(n_ops)
        self.head_skip_w = z(h, 2)
        self.head_skip_b = z(2)

        self._named = [
            ("op_embed", self.op_embed),
            ("skip_embed", self.skip_embed),
            ("start", self.start),
            *[(f"gru.{k}", v) for k, v in self.gru.items()],
            ("head_op.w", self.head_op_w),
            ("head_op.b", self.head_op_b),
            ("head_skip.w", self.head_skip_w),
            ("head_skip.b", self.head_skip_b),
        ]

    @property
    def n_decisions(self) -> int:
        return sum(
            n + n * (n - 1) // 2 for n in self.layout.slots_per_stage
        )

    def params(self):
        return [p for _, p in self._named]

    def save(self, path) -> None:
        save_tensors(path, {n: p.data.copy() for n, p in self._named})

    def load(self, path) -> None:
        state = load_tensors(path)
        for n, p in self._named:
            if state[n].shape != p.data.shape:
                raise ValueError(f"{n}: checkpoint shape {state[n].shape} != {p.data.shape}")
            p.data = state[n].copy()

    # -- policy execution -------------------------------------------------

    def _cell(self, x: Tensor, h: Tensor) -> Tensor:
        g = self.gru
        zt = sigmoid(add(dense(x, g["wz"], g["bz"]), dense(h, g["uz"])))
        rt = sigmoid(add(dense(x, g["wr"], g["br"]), dense(h, g["ur"])))
        hbar = tanh(add(dense(x, g["wh"], g["bh"]), dense(mul(rt, h), g["uh"])))
        return add(mul(affine(zt, -1.0, 1.0), h), mul(zt, hbar))

    def _run(self, rng=None, forced: ArchitectureGenome | None = None, want_entropy=False):
        """Shared decision loop. rng set: sample; forced set: teacher-forced
        log-prob graph for that genome; neither: greedy argmax decode."""
        h = Tensor(np.zeros((1, self.hidden)))
        x = self.start
        logp_total = None
        ent_total = None
        stage_ops, stage_skips = [], []
        for stage_idx, n_slots in enumerate(self.layout.slots_per_stage):
            ops_row = []
            for s in range(n_slots):
                forced_choice = forced.stage_ops[stage_idx][s] if forced else None
                choice, h, logp, ent = self._decide(
                    x, h, self.head_op_w, self.head_op_b, rng, forced_choice, want_entropy
                )
                logp_total = logp if logp_total is None else add(logp_total, logp)
                if want_entropy:
                    ent_total = ent if ent_total is None else add(ent_total, ent)
                ops_row.append(choice)
                x = embed(self.op_embed, choice)
            bits_row = []
            for k in range(n_slots * (n_slots - 1) // 2):
                forced_choice = forced.stage_skips[stage_idx][k] if forced else None
                choice, h, logp, ent = self._decide(
                    x, h, self.head_skip_w, self.head_skip_b, rng, forced_choice, want_entropy
                )
                logp_total = logp if logp_total is None else add(logp_total, logp)
                if want_entropy:
                    ent_total = ent if ent_total is None else add(ent_total, ent)
                bits_row.append(choice)
                x = embed(self.skip_embed, choice)
            stage_ops.append(tuple(ops_row))
            stage_skips.append(tuple(bits_row))
        genome = ArchitectureGenome(
            backbone_id=self.backbone_id,
            stage_ops=tuple(stage_ops),
            stage_skips=tuple(stage_skips),
        )
        if logp_total is None:
            logp_total = Tensor(0.0)  # degenerate zero-slot layout
        return genome, logp_total, ent_total

    def _decide(self, x, h, head_w, head_b, rng, forced_choice, want_entropy):
        h_new = self._cell(x, h)
        logits = dense(h_new, head_w, head_b)
        logp_row = log_softmax(logits)
        if forced_choice is not None:
            choice = int(forced_choice)
        elif rng is not None:
            p = np.exp(logp_row.data[0])
            choice = int(rng.choice(len(p), p=p / p.sum()))
        else:
            choice = int(np.argmax(logits.data[0]))
        ent = None
        if want_entropy:
            ent = affine(sum_all(mul(softmax(logits), logp_row)), -1.0)
        return choice, h_new, select_scalar(logp_row, 0, choice), ent


def sample_architecture(policy: ControllerPolicy, rng: np.random.Generator):
    genome, logp, _ = policy._run(rng=rng)
    return genome, float(logp.data)


def log_prob_graph(policy: ControllerPolicy, genome: ArchitectureGenome, want_entropy=False):
    """Teacher-forced re-run; record under an active Tape to differentiate."""
    _, logp, ent = policy._run(forced=genome, want_entropy=want_entropy)
    return logp, ent


def argmax_genome(policy: ControllerPolicy) -> ArchitectureGenome:
    genome, _, _ = policy._run()
    return genome


def reinforce_update(
    policy: ControllerPolicy,
    samples: list[tuple[ArchitectureGenome, float]],
    baseline: BaselineState,
    sgd: SgdState,
    entropy_coef: float = 0.0,
) -> float:
    """One ascent step on (1/N) sum_j (R_j - b) log pi(m_j); the baseline is
    folded in before this batch's rewards update it. Returns mean reward."""
    if not samples:
        raise ValueError("reinforce_update needs at least one sample")
    rewards = np.array([r for _, r in samples], dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise ValueError(f"non-finite rewards {rewards}")
    b = baseline.value if baseline.initialized else 0.0
    params = policy.params()
    with Tape() as tape:
        total = None
        for genome, reward in samples:
            logp, ent = log_prob_graph(policy, genome, want_entropy=entropy_coef != 0.0)
            term = affine(logp, float(reward) - b)
            if entropy_coef != 0.0:
                term = add(term, affine(ent, entropy_coef))
            total = term if total is None else add(total, term)
        # descend on the negated objective
        loss = affine(total, -1.0 / len(samples))
    grads = backward(tape, loss, params)
    sgd_step(params, [grads[p] for p in params], sgd)
    for _, reward in samples:
        baseline.update(float(reward))
    return float(rewards.mean())


def baseline_converged(state: BaselineState, window: int = 20, tol: float = 1e-3) -> bool:
    """Convergence proxy: the moving average drifted less than tol over the
    last `window` updates."""
    if len(state.history) < window:
        return False
    tail = state.history[-window:]
    return max(tail) - min(tail) < tol


def objective_estimate(policy, reward_fn, n_samples: int, rng) -> float:
    """Monte-Carlo estimate of J(theta) = E[R(m)] under the current policy."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    total = 0.0
    for _ in range(n_samples):
        genome, _ = sample_architecture(policy, rng)
        total += float(reward_fn(genome))
    return total / n_samples
