"""Shared test fixtures: tiny backbones and in-memory data bundles."""

import numpy as np

from distillnas.backbone import BackboneSpec, StageSpec
from distillnas.data import DataBundle


def tiny_spec(
    num_classes=3,
    stages=((4, 1, False),),
    stem=4,
    image_size=8,
    in_channels=3,
    backbone_id="tiny",
):
    return BackboneSpec(
        backbone_id=backbone_id,
        in_channels=in_channels,
        image_size=image_size,
        num_classes=num_classes,
        stem_channels=stem,
        stages=tuple(StageSpec(c, b, d) for c, b, d in stages),
    )


def toy_bundle(
    seed=0,
    n_train=96,
    n_val=24,
    n_test=24,
    num_classes=3,
    channels=3,
    size=8,
    separation=1.5,
):
    """Gaussian-prototype bundle built in memory (already normalized)."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(num_classes, channels, size, size))

    def split(n):
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        x = separation * protos[y] + rng.normal(size=(n, channels, size, size))
        return x, y

    train_x, train_y = split(n_train)
    val_x, val_y = split(n_val)
    test_x, test_y = split(n_test)
    mean = train_x.mean(axis=(0, 2, 3))
    std = np.maximum(train_x.std(axis=(0, 2, 3)), 1e-8)

    def norm(x):
        return (x - mean[:, None, None]) / std[:, None, None]

    return DataBundle(
        train_x=norm(train_x),
        train_y=train_y,
        val_x=norm(val_x),
        val_y=val_y,
        test_x=norm(test_x),
        test_y=test_y,
        num_classes=num_classes,
        mean=mean,
        std=std,
        augment=False,
    )
