"""Layer and network containers built on the op library.

Layers own their parameter tensors (He-uniform init for conv/dense weights,
BN gamma=1 beta=0, zero biases) and expose them in a deterministic order for
checkpointing.  ``mode`` threads through every forward: "train" and "batch"
use batch statistics in BN ("train" also updates the running buffers),
"eval" uses the frozen running statistics.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        raise NotImplementedError

    def own_params(self):
        return []

    def own_stats(self):
        return []

    def children(self):
        return []

    def named_params(self, prefix: str = ""):
        for n, p in self.own_params():
            yield prefix + n, p
        for cn, ch in self.children():
            yield from ch.named_params(f"{prefix}{cn}.")

    def named_stats(self, prefix: str = ""):
        for n, s in self.own_stats():
            yield prefix + n, s
        for cn, ch in self.children():
            yield from ch.named_stats(f"{prefix}{cn}.")

    def params(self):
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())


class Identity(Layer):
    op_id = 0

    def forward(self, x, mode="train"):
        return x


class Conv2d(Layer):
    def __init__(self, cin, cout, k, rng, stride=1, padding=None, bias=False):
        self.stride = stride
        self.padding = padding
        self.w = Tensor(he_uniform(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)
        self.b = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x, mode="train"):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def own_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class BatchNorm2d(Layer):
    def __init__(self, channels):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = ops.BnStats(channels)

    def forward(self, x, mode="train"):
        return ops.batch_norm(x, self.gamma, self.beta, self.stats, mode=mode)

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_stats(self):
        return [("", self.stats)]


class Dense(Layer):
    def __init__(self, fin, fout, rng, bias=True):
        self.w = Tensor(he_uniform(rng, (fin, fout), fin), requires_grad=True)
        self.b = Tensor(np.zeros(fout), requires_grad=True) if bias else None

    def forward(self, x, mode="train"):
        return ops.dense(x, self.w, self.b)

    def own_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class MaxPool(Layer):
    op_id = 5

    def __init__(self, k=3):
        self.k = k

    def forward(self, x, mode="train"):
        return ops.max_pool2d(x, self.k)


class AvgPool(Layer):
    op_id = 6

    def __init__(self, k=3):
        self.k = k

    def forward(self, x, mode="train"):
        return ops.avg_pool2d(x, self.k)


class PoolUnit(Layer):
    """Pooling add-on unit: pool, then parameter-free batch standardization.

    A stride-1 pool feeding global average pooling can flatten its input at
    initialization (the max over overlapping windows of fresh ReLU maps is
    nearly constant), starving everything upstream of gradient signal.
    Standardizing the pooled map per channel restores unit variance while
    keeping pooling add-ons free of trainable parameters: gamma/beta stay
    fixed at 1/0 and only running statistics are tracked for eval mode.
    """

    def __init__(self, pool, channels):
        self.pool = pool
        self.gamma = Tensor(np.ones(channels))
        self.beta = Tensor(np.zeros(channels))
        self.stats = ops.BnStats(channels)

    @property
    def op_id(self):
        return self.pool.op_id

    def forward(self, x, mode="train"):
        h = self.pool.forward(x, mode)
        return ops.batch_norm(h, self.gamma, self.beta, self.stats, mode=mode)

    def children(self):
        return [("pool", self.pool)]

    def own_stats(self):
        return [("", self.stats)]


class ConvUnit(Layer):
    """Channel-preserving conv -> BN -> ReLU add-on unit."""

    def __init__(self, channels, k, rng):
        self.k = k
        self.conv = Conv2d(channels, channels, k, rng, bias=True)
        self.bn = BatchNorm2d(channels)

    def forward(self, x, mode="train"):
        return ops.relu(self.bn.forward(self.conv.forward(x, mode), mode))

    def children(self):
        return [("conv", self.conv), ("bn", self.bn)]


class SepConvUnit(Layer):
    """Depthwise-separable conv -> BN -> ReLU add-on unit."""

    def __init__(self, channels, k, rng):
        self.k = k
        self.dw = Tensor(he_uniform(rng, (channels, k, k), k * k), requires_grad=True)
        self.pw = Tensor(
            he_uniform(rng, (channels, channels, 1, 1), channels), requires_grad=True
        )
        self.b = Tensor(np.zeros(channels), requires_grad=True)
        self.bn = BatchNorm2d(channels)

    def forward(self, x, mode="train"):
        return ops.relu(self.bn.forward(ops.sepconv2d(x, self.dw, self.pw, self.b), mode))

    def own_params(self):
        return [("dw", self.dw), ("pw", self.pw), ("b", self.b)]

    def children(self):
        return [("bn", self.bn)]


class ResidualBlock(Layer):
    """Basic two-conv block with a parameter-free shortcut (subsample + zero
    channel padding when shape changes)."""

    def __init__(self, cin, cout, rng, downsample=False):
        stride = 2 if downsample else 1
        self.downsample = downsample
        self.cin, self.cout = cin, cout
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=1, padding=1)
        self.bn2 = BatchNorm2d(cout)

    def forward(self, x, mode="train"):
        h = ops.relu(self.bn1.forward(self.conv1.forward(x, mode), mode))
        h = self.bn2.forward(self.conv2.forward(h, mode), mode)
        if self.downsample or self.cin != self.cout:
            sc = ops.subsample_pad_channels(x, self.cout, stride=2 if self.downsample else 1)
        else:
            sc = x
        return ops.relu(ops.add(h, sc))

    def children(self):
        return [
            ("conv1", self.conv1),
            ("bn1", self.bn1),
            ("conv2", self.conv2),
            ("bn2", self.bn2),
        ]


class Network(Layer):
    """Backbone (stem + residual stages + classifier head) with optional
    per-stage add-on chains and their skip wiring."""

    def __init__(self, stem_conv, stem_bn, stages, head, addon_chains=None, stage_skips=None, genome=None):
        self.stem_conv = stem_conv
        self.stem_bn = stem_bn
        self.stages = stages  # list[list[ResidualBlock]]
        self.head = head
        self.addon_chains = addon_chains or [[] for _ in stages]
        self.stage_skips = stage_skips or [() for _ in stages]
        self.genome = genome

    def forward(self, x, mode="train"):
        h = ops.relu(self.stem_bn.forward(self.stem_conv.forward(x, mode), mode))
        for idx, blocks in enumerate(self.stages):
            for blk in blocks:
                h = blk.forward(h, mode)
            h = self._addons_forward(idx, h, mode)
        h = ops.global_avg_pool(h)
        return self.head.forward(h, mode)

    def _addons_forward(self, stage_idx, stage_out, mode):
        chain = self.addon_chains[stage_idx]
        if not chain:
            return stage_out
        bits = self.stage_skips[stage_idx]
        # outs[0] is the stage output; outs[s+1] the output of slot s
        outs = [stage_out]
        for b, layer in enumerate(chain):
            inp = outs[b]
            for a in range(b):
                if bits[skip_pair_index(a, b, len(chain))]:
                    inp = ops.add(inp, outs[a + 1])
            outs.append(layer.forward(inp, mode))
        return outs[-1]

    def children(self):
        out = [("stem.conv", self.stem_conv), ("stem.bn", self.stem_bn)]
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                out.append((f"stage{i}.block{j}", blk))
            for s, layer in enumerate(self.addon_chains[i]):
                out.append((f"stage{i}.addon{s}", layer))
        out.append(("head", self.head))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data.copy() for n, p in self.named_params()}
        for n, st in self.named_stats():
            state[f"{n}running_mean"] = st.mean.copy()
            state[f"{n}running_var"] = st.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.named_params():
            arr = state[n]
            if arr.shape != p.data.shape:
                raise ValueError(f"{n}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(np.float64).copy()
        for n, st in self.named_stats():
            st.mean = state[f"{n}running_mean"].copy()
            st.var = state[f"{n}running_var"].copy()


def skip_pair_index(a: int, b: int, n_slots: int) -> int:
    """Index of pair (a, b), a < b, in lexicographic order over slot pairs."""
    if not 0 <= a < b < n_slots:
        raise ValueError(f"skip pair ({a}, {b}) invalid for {n_slots} slots")
    # pairs (0,1),(0,2),...,(0,n-1),(1,2),...
    return a * n_slots - a * (a + 1) // 2 + (b - a - 1)


def predict_logits(net: Network, x: np.ndarray, batch_size: int = 256, mode: str = "eval") -> np.ndarray:
    """Forward a full array in batches, no gradient recording."""
    outs = []
    for i in range(0, len(x), batch_size):
        outs.append(net.forward(Tensor(x[i : i + batch_size]), mode=mode).data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, 0))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise ValueError("accuracy: empty batch")
    return float((logits.argmax(axis=1) == labels).mean())
