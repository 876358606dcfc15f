"""Architecture search space anchored on a fixed backbone.

A genome assigns one of 7 channel/shape-preserving operations to each
add-on slot (slots sit at stage ends, split evenly across stages) plus a
skip bit for every ordered slot pair (a < b) within a stage.  Skips merge
by elementwise add.  The per-stage space has 2^(Li(Li-1)/2) * 7^Li members
and the full space is the product over stages.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneSpec, build_network
from .nn import AvgPool, ConvUnit, Identity, MaxPool, Network, PoolUnit, SepConvUnit


class AddOnOp(enum.IntEnum):
    IDENTITY = 0
    CONV3 = 1
    CONV5 = 2
    SEPCONV3 = 3
    SEPCONV5 = 4
    MAXPOOL3 = 5
    AVGPOOL3 = 6


NUM_OPS = len(AddOnOp)


@dataclass(frozen=True)
class SlotLayout:
    slots_per_stage: tuple[int, ...]

    def __post_init__(self):
        if any(n < 0 for n in self.slots_per_stage):
            raise ValueError("negative slot count")

    @classmethod
    def even(cls, total_slots: int, num_stages: int) -> "SlotLayout":
        if num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        if total_slots % num_stages != 0:
            raise ValueError(
                f"{total_slots} slots do not split evenly over {num_stages} stages"
            )
        return cls((total_slots // num_stages,) * num_stages)

    @property
    def total_slots(self) -> int:
        return sum(self.slots_per_stage)

    def skip_bits_per_stage(self) -> tuple[int, ...]:
        return tuple(n * (n - 1) // 2 for n in self.slots_per_stage)


@dataclass(frozen=True)
class ArchitectureGenome:
    backbone_id: str
    stage_ops: tuple[tuple[int, ...], ...]
    stage_skips: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.stage_ops) != len(self.stage_skips):
            raise ValueError("stage_ops and stage_skips length mismatch")
        for ops, skips in zip(self.stage_ops, self.stage_skips):
            if any(not 0 <= o < NUM_OPS for o in ops):
                raise ValueError(f"op id out of range in {ops}")
            n = len(ops)
            if len(skips) != n * (n - 1) // 2:
                raise ValueError(
                    f"stage with {n} slots needs {n * (n - 1) // 2} skip bits, got {len(skips)}"
                )
            if any(b not in (0, 1) for b in skips):
                raise ValueError(f"skip bits must be 0/1, got {skips}")

    @property
    def layout(self) -> SlotLayout:
        return SlotLayout(tuple(len(ops) for ops in self.stage_ops))

    def sort_key(self) -> tuple[int, ...]:
        flat: list[int] = []
        for ops, skips in zip(self.stage_ops, self.stage_skips):
            flat.extend(ops)
            flat.extend(skips)
        return tuple(flat)

    def to_json(self) -> str:
        obj = {
            "backbone_id": self.backbone_id,
            "stages": [
                {"ops": list(ops), "skips": list(skips)}
                for ops, skips in zip(self.stage_ops, self.stage_skips)
            ],
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureGenome":
        obj = json.loads(text)
        try:
            stages = obj["stages"]
            return cls(
                backbone_id=obj["backbone_id"],
                stage_ops=tuple(tuple(int(o) for o in st["ops"]) for st in stages),
                stage_skips=tuple(tuple(int(b) for b in st["skips"]) for st in stages),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed genome JSON: {exc}") from exc


def neutral_genome(backbone: BackboneSpec, layout: SlotLayout) -> ArchitectureGenome:
    """All-Identity, no-skip genome (decodes to the plain backbone)."""
    return ArchitectureGenome(
        backbone_id=backbone.backbone_id,
        stage_ops=tuple((0,) * n for n in layout.slots_per_stage),
        stage_skips=tuple((0,) * b for b in layout.skip_bits_per_stage()),
    )


def make_addon_layer(op: int, channels: int, rng: np.random.Generator):
    op = AddOnOp(op)
    if op == AddOnOp.IDENTITY:
        return Identity()
    if op == AddOnOp.CONV3:
        return ConvUnit(channels, 3, rng)
    if op == AddOnOp.CONV5:
        return ConvUnit(channels, 5, rng)
    if op == AddOnOp.SEPCONV3:
        return SepConvUnit(channels, 3, rng)
    if op == AddOnOp.SEPCONV5:
        return SepConvUnit(channels, 5, rng)
    if op == AddOnOp.MAXPOOL3:
        return PoolUnit(MaxPool(3), channels)
    return PoolUnit(AvgPool(3), channels)


def decode(genome: ArchitectureGenome, backbone: BackboneSpec, rng: np.random.Generator) -> Network:
    """Materialize a genome as a runnable network with freshly initialized
    add-on parameters."""
    if genome.backbone_id != backbone.backbone_id:
        raise ValueError(
            f"genome targets backbone {genome.backbone_id!r}, got {backbone.backbone_id!r}"
        )
    if len(genome.stage_ops) != len(backbone.stages):
        raise ValueError(
            f"genome has {len(genome.stage_ops)} stages, backbone {len(backbone.stages)}"
        )
    chains = [
        [make_addon_layer(op, st.channels, rng) for op in ops]
        for ops, st in zip(genome.stage_ops, backbone.stages)
    ]
    return build_network(backbone, rng, addon_chains=chains, stage_skips=list(genome.stage_skips), genome=genome)


def encode(net: Network) -> ArchitectureGenome:
    """Recover the genome from a decoded network's add-on structure."""
    kind_map = {
        Identity: AddOnOp.IDENTITY,
        MaxPool: AddOnOp.MAXPOOL3,
        AvgPool: AddOnOp.AVGPOOL3,
    }
    stage_ops = []
    for chain in net.addon_chains:
        ops_row = []
        for layer in chain:
            if isinstance(layer, ConvUnit):
                ops_row.append(AddOnOp.CONV3 if layer.k == 3 else AddOnOp.CONV5)
            elif isinstance(layer, SepConvUnit):
                ops_row.append(AddOnOp.SEPCONV3 if layer.k == 3 else AddOnOp.SEPCONV5)
            elif isinstance(layer, PoolUnit):
                ops_row.append(AddOnOp(layer.op_id))
            else:
                ops_row.append(kind_map[type(layer)])
        stage_ops.append(tuple(int(o) for o in ops_row))
    if net.genome is None:
        raise ValueError("network was not decoded from a genome")
    return ArchitectureGenome(
        backbone_id=net.genome.backbone_id,
        stage_ops=tuple(stage_ops),
        stage_skips=tuple(tuple(int(b) for b in bits) for bits in net.stage_skips),
    )


def addon_param_count(op: int, channels: int) -> int:
    """Closed-form trainable-parameter count of one add-on unit."""
    c = channels
    op = AddOnOp(op)
    if op in (AddOnOp.IDENTITY, AddOnOp.MAXPOOL3, AddOnOp.AVGPOOL3):
        return 0
    if op in (AddOnOp.CONV3, AddOnOp.CONV5):
        k = 3 if op == AddOnOp.CONV3 else 5
        return k * k * c * c + c + 2 * c  # conv w + bias + BN affine
    k = 3 if op == AddOnOp.SEPCONV3 else 5
    return k * k * c + c * c + c + 2 * c  # depthwise + pointwise + bias + BN


def backbone_param_count(spec: BackboneSpec) -> int:
    """Closed-form count for the add-on-free backbone (bias-free convs,
    BN affine pairs, parameter-free shortcuts, dense head with bias)."""
    total = 9 * spec.in_channels * spec.stem_channels + 2 * spec.stem_channels
    cin = spec.stem_channels
    for st in spec.stages:
        cout = st.channels
        total += 9 * cin * cout + 2 * cout + 9 * cout * cout + 2 * cout  # entry block
        total += (st.blocks - 1) * (18 * cout * cout + 4 * cout)
        cin = cout
    total += cin * spec.num_classes + spec.num_classes
    return total


def genome_param_count(genome: ArchitectureGenome, backbone: BackboneSpec) -> int:
    total = backbone_param_count(backbone)
    for ops, st in zip(genome.stage_ops, backbone.stages):
        total += sum(addon_param_count(op, st.channels) for op in ops)
    return total


def search_space_size(layout: SlotLayout, n_ops: int = NUM_OPS) -> int:
    size = 1
    for n in layout.slots_per_stage:
        size *= 2 ** (n * (n - 1) // 2) * n_ops**n
    return size


def enumerate_genomes(layout: SlotLayout, backbone_id: str, cap: int = 10**6, n_ops: int = NUM_OPS):
    """Yield every genome exactly once, in sort_key order. n_ops < 7
    restricts the op vocabulary (policies can run narrowed spaces)."""
    size = search_space_size(layout, n_ops)
    if size > cap:
        raise ValueError(f"search space has {size} genomes, enumeration capped at {cap}")

    def stage_options(n_slots: int):
        n_bits = n_slots * (n_slots - 1) // 2
        for ops in itertools.product(range(n_ops), repeat=n_slots):
            for bits in itertools.product((0, 1), repeat=n_bits):
                yield ops, bits

    per_stage = [list(stage_options(n)) for n in layout.slots_per_stage]
    for combo in itertools.product(*per_stage):
        yield ArchitectureGenome(
            backbone_id=backbone_id,
            stage_ops=tuple(ops for ops, _ in combo),
            stage_skips=tuple(bits for _, bits in combo),
        )
