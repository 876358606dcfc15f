"""Backbone family: CIFAR-style residual stacks described by a small spec.

A backbone is a stem conv+BN, a sequence of stages (each a run of basic
residual blocks at fixed width, optionally entered through a stride-2
block), global average pooling, and a dense classifier.  Shortcuts are
parameter-free (subsample + zero channel padding), convs are bias-free,
BN carries the affine pair; this matches the 0.47M-parameter budget of
the depth-32, 100-class reference student.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import BatchNorm2d, Conv2d, Dense, Network, ResidualBlock


@dataclass(frozen=True)
class StageSpec:
    channels: int
    blocks: int
    downsample: bool  # stride-2 entry into the stage

    def __post_init__(self):
        if self.channels <= 0 or self.blocks <= 0:
            raise ValueError(f"invalid stage spec {self}")


@dataclass(frozen=True)
class BackboneSpec:
    backbone_id: str
    in_channels: int
    image_size: int
    num_classes: int
    stem_channels: int
    stages: tuple[StageSpec, ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("backbone needs at least one stage")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(s.channels for s in self.stages)


def toy_backbone(num_classes: int = 4, in_channels: int = 3, image_size: int = 16) -> BackboneSpec:
    """Desk-scale two-stage backbone for fast experiments (~10k params)."""
    return BackboneSpec(
        backbone_id="toy-8x2",
        in_channels=in_channels,
        image_size=image_size,
        num_classes=num_classes,
        stem_channels=8,
        stages=(StageSpec(8, 2, False), StageSpec(16, 2, True)),
    )


def resnet_cifar(depth: int, num_classes: int, in_channels: int = 3, image_size: int = 32) -> BackboneSpec:
    """Standard 6n+2 residual stack (16/32/64 channels over three stages)."""
    if (depth - 2) % 6 != 0:
        raise ValueError(f"depth must be 6n+2, got {depth}")
    n = (depth - 2) // 6
    return BackboneSpec(
        backbone_id=f"resnet{depth}",
        in_channels=in_channels,
        image_size=image_size,
        num_classes=num_classes,
        stem_channels=16,
        stages=(StageSpec(16, n, False), StageSpec(32, n, True), StageSpec(64, n, True)),
    )


def resnet32(num_classes: int = 100) -> BackboneSpec:
    return resnet_cifar(32, num_classes)


def deepen(spec: BackboneSpec, factor: int) -> BackboneSpec:
    """Man-made baseline: multiply every stage's block count."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return BackboneSpec(
        backbone_id=f"{spec.backbone_id}-deep{factor}x",
        in_channels=spec.in_channels,
        image_size=spec.image_size,
        num_classes=spec.num_classes,
        stem_channels=spec.stem_channels,
        stages=tuple(StageSpec(s.channels, s.blocks * factor, s.downsample) for s in spec.stages),
    )


def widen(spec: BackboneSpec, factor: int) -> BackboneSpec:
    """Man-made baseline: multiply stem and stage widths."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return BackboneSpec(
        backbone_id=f"{spec.backbone_id}-wide{factor}x",
        in_channels=spec.in_channels,
        image_size=spec.image_size,
        num_classes=spec.num_classes,
        stem_channels=spec.stem_channels * factor,
        stages=tuple(StageSpec(s.channels * factor, s.blocks, s.downsample) for s in spec.stages),
    )


def build_network(
    spec: BackboneSpec,
    rng: np.random.Generator,
    addon_chains=None,
    stage_skips=None,
    genome=None,
) -> Network:
    """Instantiate the backbone; add-on chains (one list of layers per stage)
    and skip bit tuples may be attached by the search-space decoder."""
    stem_conv = Conv2d(spec.in_channels, spec.stem_channels, 3, rng, stride=1, padding=1)
    stem_bn = BatchNorm2d(spec.stem_channels)
    stages = []
    cin = spec.stem_channels
    for st in spec.stages:
        blocks = [ResidualBlock(cin, st.channels, rng, downsample=st.downsample)]
        blocks += [ResidualBlock(st.channels, st.channels, rng) for _ in range(st.blocks - 1)]
        stages.append(blocks)
        cin = st.channels
    head = Dense(cin, spec.num_classes, rng)
    return Network(stem_conv, stem_bn, stages, head, addon_chains, stage_skips, genome=genome)
