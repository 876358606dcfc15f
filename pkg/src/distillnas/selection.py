"""Memory-constrained final selection and from-scratch retraining.

select_best evaluates a candidate list (sampled from the converged policy,
or the whole space when it is small enough to enumerate) on a reward
function and returns the feasible argmax under the parameter budget, ties
broken by smaller parameter count then lexicographic genome order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneSpec
from .controller import ControllerPolicy, argmax_genome, sample_architecture
from .data import DataBundle
from .nn import accuracy
from .optim import TrainSchedule
from .search_space import (
    ArchitectureGenome,
    decode,
    enumerate_genomes,
    genome_param_count,
    search_space_size,
)
from .supernet import SharedPool
from .tensor import Tensor
from .training import train_model


class NoFeasibleModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class CandidateEval:
    genome: ArchitectureGenome
    reward: float
    param_count: int
    feasible: bool


@dataclass
class SelectionReport:
    budget: int
    candidates: list  # CandidateEval, best-first total order
    winner: ArchitectureGenome

    def to_json(self) -> str:
        return json.dumps(
            {
                "budget": self.budget,
                "winner": json.loads(self.winner.to_json()),
                "candidates": [
                    {
                        "genome": json.loads(c.genome.to_json()),
                        "reward": c.reward,
                        "param_count": c.param_count,
                        "feasible": c.feasible,
                    }
                    for c in self.candidates
                ],
            },
            indent=2,
            sort_keys=True,
        )


def full_val_reward(pool: SharedPool, bundle: DataBundle, batch_size: int = 256):
    """Reward on the whole validation split with shared weights (final
    decision, unlike the single-batch rewards used during search)."""

    def reward_fn(genome: ArchitectureGenome) -> float:
        view = pool.instantiate(genome)
        outs = []
        for i in range(0, len(bundle.val_y), batch_size):
            xb = Tensor(bundle.val_x[i : i + batch_size])
            outs.append(view.forward(xb, mode="batch").data)
        return accuracy(np.concatenate(outs), bundle.val_y)

    return reward_fn


def select_best(
    policy: ControllerPolicy,
    backbone: BackboneSpec,
    budget: int,
    n_candidates: int,
    rng: np.random.Generator,
    reward_fn,
    extra_genomes=(),
) -> SelectionReport:
    """When the (possibly op-restricted) space is no larger than
    n_candidates the whole space is evaluated, making the result the exact
    brute-force feasible argmax; otherwise candidates are policy samples
    plus the argmax decode plus any leaderboard extras, deduplicated."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    if search_space_size(policy.layout, policy.n_ops) <= n_candidates:
        pool_genomes = list(
            enumerate_genomes(policy.layout, backbone.backbone_id, n_ops=policy.n_ops)
        )
    else:
        pool_genomes = [sample_architecture(policy, rng)[0] for _ in range(n_candidates)]
        pool_genomes.append(argmax_genome(policy))
        pool_genomes.extend(extra_genomes)
    unique = list(dict.fromkeys(pool_genomes))

    evals = []
    for g in unique:
        count = genome_param_count(g, backbone)
        evals.append(
            CandidateEval(
                genome=g,
                reward=float(reward_fn(g)),
                param_count=count,
                feasible=count <= budget,
            )
        )
    evals.sort(key=lambda c: (-c.reward, c.param_count, c.genome.sort_key()))
    winner = next((c for c in evals if c.feasible), None)
    if winner is None:
        smallest = min(c.param_count for c in evals) if evals else 0
        raise NoFeasibleModelError(
            f"no candidate fits budget {budget} (smallest candidate has {smallest} params)"
        )
    return SelectionReport(budget=budget, candidates=evals, winner=winner.genome)


def retrain(
    genome: ArchitectureGenome,
    backbone: BackboneSpec,
    bundle: DataBundle,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    loss_kind: str = "od",
    distill=None,
    member_logits: np.ndarray | None = None,
    log=None,
) -> tuple:
    """Fresh initialization (nothing carried over from the pool), full
    schedule with the configured loss."""
    net = decode(genome, backbone, rng)
    result = train_model(
        net,
        bundle,
        schedule,
        rng,
        loss_kind=loss_kind,
        distill=distill,
        member_logits=member_logits,
        log=log,
    )
    return net, result
