"""Shared-parameter pool for weight-sharing search.

One persistent layer lives at every (slot, op) cell of the grid plus one
shared backbone; instantiating a genome builds a network view whose layers
alias pool objects, so SGD updates on a sampled candidate land in the pool.
Candidate evaluation runs BN in "batch" mode (batch statistics) to keep
running-stat contamination across genomes out of the rewards.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .backbone import BackboneSpec, build_network
from .nn import Network, accuracy
from .optim import DivergenceError, SgdState, sgd_step
from .search_space import ArchitectureGenome, NUM_OPS, SlotLayout, make_addon_layer
from .serialize import load_tensors, save_tensors
from .tensor import Tape, Tensor, backward
from .training import compute_loss


class SharedPool:
    def __init__(self, backbone: BackboneSpec, layout: SlotLayout, rng: np.random.Generator):
        if len(layout.slots_per_stage) != len(backbone.stages):
            raise ValueError(
                f"layout has {len(layout.slots_per_stage)} stages, backbone {len(backbone.stages)}"
            )
        self.backbone_spec = backbone
        self.layout = layout
        self.net = build_network(backbone, rng)
        # global slot index is stage-major; every (slot, op) cell eagerly built
        self.slot_channels: list[int] = []
        for n_slots, st in zip(layout.slots_per_stage, backbone.stages):
            self.slot_channels.extend([st.channels] * n_slots)
        self.grid = {
            (i, op): make_addon_layer(op, c, rng)
            for i, c in enumerate(self.slot_channels)
            for op in range(NUM_OPS)
        }
        self.version = 0

    def instantiate(self, genome: ArchitectureGenome) -> Network:
        """Network view aliasing pool layers (no copies)."""
        if genome.layout != self.layout:
            raise ValueError(f"genome layout {genome.layout} != pool layout {self.layout}")
        if genome.backbone_id != self.backbone_spec.backbone_id:
            raise ValueError(
                f"genome backbone {genome.backbone_id!r} != pool backbone "
                f"{self.backbone_spec.backbone_id!r}"
            )
        chains = []
        slot = 0
        for ops_row in genome.stage_ops:
            chain = []
            for op in ops_row:
                if (slot, op) not in self.grid:
                    raise KeyError(f"pool entry missing for slot {slot} op {op}")
                chain.append(self.grid[(slot, op)])
                slot += 1
            chains.append(chain)
        base = self.net
        return Network(
            base.stem_conv,
            base.stem_bn,
            base.stages,
            base.head,
            addon_chains=chains,
            stage_skips=list(genome.stage_skips),
            genome=genome,
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"backbone.{k}": v for k, v in self.net.state_dict().items()}
        for (i, op), layer in sorted(self.grid.items()):
            prefix = f"slot{i}.op{op}."
            for n, p in layer.named_params():
                state[prefix + n] = p.data.copy()
            for n, st in layer.named_stats():
                state[f"{prefix}{n}running_mean"] = st.mean.copy()
                state[f"{prefix}{n}running_var"] = st.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.net.load_state_dict(
            {k[len("backbone.") :]: v for k, v in state.items() if k.startswith("backbone.")}
        )
        for (i, op), layer in sorted(self.grid.items()):
            prefix = f"slot{i}.op{op}."
            for n, p in layer.named_params():
                p.data = state[prefix + n].astype(np.float64).copy()
            for n, st in layer.named_stats():
                st.mean = state[f"{prefix}{n}running_mean"].copy()
                st.var = state[f"{prefix}{n}running_var"].copy()

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_tensors(path))


def train_shared_step(
    pool: SharedPool,
    genome: ArchitectureGenome,
    batch: tuple[np.ndarray, np.ndarray],
    member_logits: np.ndarray | None,
    cfg: losses.DistillConfig,
    sgd: SgdState,
    loss_kind: str = "od",
) -> float:
    """One forward/backward/SGD update of the genome's view; updates land in
    the pool. Returns the scalar loss."""
    x, y = batch
    view = pool.instantiate(genome)
    params = view.params()
    with Tape() as tape:
        logits = view.forward(Tensor(x), mode="train")
        loss = compute_loss(loss_kind, logits, y, member_logits, cfg)
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite shared-training loss {value!r}")
    grads = backward(tape, loss, params)
    sgd_step(params, grads, sgd)
    pool.version += 1
    return value


def batch_reward(pool: SharedPool, genome: ArchitectureGenome, val_batch) -> float:
    """Classification accuracy of the instantiated view on one held-out
    batch, BN in batch-statistics mode."""
    x, y = val_batch
    if len(y) == 0:
        raise ValueError("empty reward batch")
    view = pool.instantiate(genome)
    logits = view.forward(Tensor(x), mode="batch")
    return accuracy(logits.data, y)
