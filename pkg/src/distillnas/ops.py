"""Forward operations and their adjoints.

Numeric conventions: feature maps are [B, C, H, W]; dense activations are
[B, F].  All convolution/pooling variants used as add-on layers run stride 1
with same-padding so they preserve the spatial dims and channel count.
Pooling excludes padding from the average (a constant input stays constant),
and max pooling pads with -inf.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, record


def _same_pad(k: int) -> int:
    return (k - 1) // 2


def _pad_hw(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(
        x, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant", constant_values=value
    )


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # xp: [B,C,Hp,Wp] -> [B,C,Ho,Wo,k,k] view
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# structural ops


def identity(x: Tensor) -> Tensor:
    return x


def add(x: Tensor, y: Tensor) -> Tensor:
    _require(
        x.shape == y.shape, f"add: shape mismatch {x.shape} vs {y.shape}"
    )
    out = Tensor(x.data + y.data)
    return record("add", (x, y), out, lambda g: (g, g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _require(x.shape == y.shape, f"mul: shape mismatch {x.shape} vs {y.shape}")
    out = Tensor(x.data * y.data)
    return record("mul", (x, y), out, lambda g: (g * y.data, g * x.data))


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Elementwise scale * x + shift with constant coefficients."""
    out = Tensor(scale * x.data + shift)
    return record("affine", (x,), out, lambda g: (g * scale,))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    return record("sum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())
    return record(
        "mean", (x,), out, lambda g: (np.broadcast_to(g / n, x.shape).copy(),)
    )


def dot_const(x: Tensor, w: np.ndarray) -> Tensor:
    """Scalar <x, w> against a constant weight vector (no grad to w)."""
    w = np.asarray(w, dtype=np.float64)
    _require(x.shape == w.shape, f"dot_const: shape mismatch {x.shape} vs {w.shape}")
    out = Tensor(float(np.dot(x.data.ravel(), w.ravel())))
    return record("dot_const", (x,), out, lambda g: (g * w,))


def select_scalar(x: Tensor, row: int, col: int) -> Tensor:
    out = Tensor(x.data[row, col])

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[row, col] = g
        return (dx,)

    return record("select", (x,), out, bwd)


def embed(table: Tensor, index: int) -> Tensor:
    """Row lookup into an embedding table, returned as [1, E]."""
    out = Tensor(table.data[index : index + 1].copy())

    def bwd(g):
        dt = np.zeros_like(table.data)
        dt[index] = g[0]
        return (dt,)

    return record("embed", (table,), out, bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    return record("relu", (x,), out, lambda g: (g * (x.data > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)
    return record("sigmoid", (x,), out, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - y * y),))


def softmax(x: Tensor) -> Tensor:
    """Row-wise stable softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return record("softmax", (x,), out, bwd)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def bwd(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return record("log_softmax", (x,), out, bwd)


# ---------------------------------------------------------------------------
# dense / convolution


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    _require(x.data.ndim == 2, f"dense: input must be [B,F], got {x.shape}")
    _require(
        x.shape[1] == w.shape[0],
        f"dense: input features {x.shape} incompatible with weight {w.shape}",
    )
    y = x.data @ w.data
    if b is not None:
        _require(
            b.shape == (w.shape[1],),
            f"dense: bias shape {b.shape} != ({w.shape[1]},)",
        )
        y = y + b.data
    out = Tensor(y)

    def bwd(g):
        db = g.sum(axis=0) if b is not None else None
        return (g @ w.data.T, x.data.T @ g, db)

    return record("dense", (x, w, b), out, bwd)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    """2-D convolution (cross-correlation), NCHW, weight [O, C, k, k].

    ``padding=None`` means same-padding, valid for stride 1 and odd kernels.
    """
    _require(x.data.ndim == 4, f"conv2d: input must be [B,C,H,W], got {x.shape}")
    _require(w.data.ndim == 4, f"conv2d: weight must be [O,C,k,k], got {w.shape}")
    o, c, kh, kw = w.shape
    _require(kh == kw, f"conv2d: only square kernels, got {w.shape}")
    _require(
        x.shape[1] == c,
        f"conv2d: input channels {x.shape[1]} != weight channels {c} "
        f"(input {x.shape}, weight {w.shape})",
    )
    pad = _same_pad(kh) if padding is None else padding
    bsz, _, h, wd = x.shape
    xp = _pad_hw(x.data, pad)
    win = _windows(xp, kh, stride)  # [B,C,Ho,Wo,k,k]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * ho * wo, c * kh * kw
    )
    wmat = w.data.reshape(o, -1)
    ymat = cols @ wmat.T
    if b is not None:
        _require(b.shape == (o,), f"conv2d: bias shape {b.shape} != ({o},)")
        ymat = ymat + b.data
    out = Tensor(ymat.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2))

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        dw = (gmat.T @ cols).reshape(o, c, kh, kw)
        db = gmat.sum(axis=0) if b is not None else None
        dcols = gmat @ wmat
        dwin = dcols.reshape(bsz, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        hs = (ho - 1) * stride + 1
        ws = (wo - 1) * stride + 1
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + hs : stride, j : j + ws : stride] += dwin[
                    ..., i, j
                ]
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return (dx, dw, db)

    return record("conv2d", (x, w, b), out, bwd)


def depthwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel convolution, stride 1, same-padding; weight [C, k, k]."""
    _require(x.data.ndim == 4, f"depthwise: input must be [B,C,H,W], got {x.shape}")
    _require(w.data.ndim == 3, f"depthwise: weight must be [C,k,k], got {w.shape}")
    c, kh, kw = w.shape
    _require(kh == kw, f"depthwise: only square kernels, got {w.shape}")
    _require(
        x.shape[1] == c,
        f"depthwise: input channels {x.shape[1]} != weight channels {c} "
        f"(input {x.shape}, weight {w.shape})",
    )
    pad = _same_pad(kh)
    bsz, _, h, wd = x.shape
    xp = _pad_hw(x.data, pad)
    win = _windows(xp, kh, 1)
    y = np.einsum("bchwij,cij->bchw", win, w.data, optimize=True)
    out = Tensor(y)

    def bwd(g):
        dw = np.einsum("bchwij,bchw->cij", win, g, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + h, j : j + wd] += g * w.data[:, i, j][None, :, None, None]
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return (dx, dw)

    return record("depthwise_conv2d", (x, w), out, bwd)


def sepconv2d(x: Tensor, dw: Tensor, pw: Tensor, b: Tensor | None = None) -> Tensor:
    """Depthwise-separable conv: depthwise [C,k,k] then pointwise [O,C,1,1]."""
    y = depthwise_conv2d(x, dw)
    _require(
        pw.data.ndim == 4 and pw.shape[2:] == (1, 1),
        f"sepconv2d: pointwise must be [O,C,1,1], got {pw.shape}",
    )
    return conv2d(y, pw, b, stride=1, padding=0)


def max_pool2d(x: Tensor, k: int = 3) -> Tensor:
    """Max pooling, stride 1, same-padding (pad value -inf)."""
    _require(x.data.ndim == 4, f"max_pool2d: input must be [B,C,H,W], got {x.shape}")
    pad = _same_pad(k)
    bsz, c, h, w = x.shape
    xp = _pad_hw(x.data, pad, value=-np.inf)
    win = _windows(xp, k, 1)
    flat = win.reshape(bsz, c, h, w, k * k)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])

    def bwd(g):
        di, dj = idx // k, idx % k
        bi, ci, hi, wi = np.indices((bsz, c, h, w))
        dxp = np.zeros_like(xp)
        np.add.at(dxp, (bi, ci, hi + di, wi + dj), g)
        return (dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp,)

    return record("max_pool2d", (x,), out, bwd)


def avg_pool2d(x: Tensor, k: int = 3) -> Tensor:
    """Average pooling, stride 1, same-padding; padding excluded from count."""
    _require(x.data.ndim == 4, f"avg_pool2d: input must be [B,C,H,W], got {x.shape}")
    pad = _same_pad(k)
    bsz, c, h, w = x.shape
    xp = _pad_hw(x.data, pad)
    win = _windows(xp, k, 1)
    ones = _pad_hw(np.ones((1, 1, h, w)), pad)
    counts = _windows(ones, k, 1).sum(axis=(-1, -2))[0, 0]  # [H,W]
    out = Tensor(win.sum(axis=(-1, -2)) / counts)

    def bwd(g):
        gc = g / counts
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += gc
        return (dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp,)

    return record("avg_pool2d", (x,), out, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    _require(
        x.data.ndim == 4, f"global_avg_pool: input must be [B,C,H,W], got {x.shape}"
    )
    _, _, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return record("global_avg_pool", (x,), out, bwd)


def subsample_pad_channels(x: Tensor, out_channels: int, stride: int = 2) -> Tensor:
    """Parameter-free residual shortcut: spatial subsampling + zero channel pad."""
    _require(x.data.ndim == 4, f"subsample: input must be [B,C,H,W], got {x.shape}")
    bsz, c, h, w = x.shape
    _require(out_channels >= c, f"subsample: cannot drop channels {c}->{out_channels}")
    y = x.data[:, :, ::stride, ::stride]
    if out_channels > c:
        extra = np.zeros((bsz, out_channels - c) + y.shape[2:])
        y = np.concatenate([y, extra], axis=1)
    out = Tensor(y)

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, :, ::stride, ::stride] = g[:, :c]
        return (dx,)

    return record("subsample_pad", (x,), out, bwd)


# ---------------------------------------------------------------------------
# batch normalization


class BnStats:
    """Running mean/var buffers for one batch-norm layer (not parameters)."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)

    def copy(self) -> "BnStats":
        st = BnStats(len(self.mean))
        st.mean = self.mean.copy()
        st.var = self.var.copy()
        return st


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BnStats,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    mode="train": batch statistics, running buffers updated.
    mode="batch": batch statistics, buffers untouched (shared-pool evaluation).
    mode="eval":  running statistics; the op is affine in x.
    """
    nd = x.data.ndim
    _require(nd in (2, 4), f"batch_norm: input must be [B,C] or [B,C,H,W], got {x.shape}")
    c = x.shape[1]
    _require(
        gamma.shape == (c,) and beta.shape == (c,),
        f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)",
    )
    axes = (0,) if nd == 2 else (0, 2, 3)
    shape = (1, c) if nd == 2 else (1, c, 1, 1)
    m = x.data.size // c

    if mode == "eval":
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean.reshape(shape)) * inv.reshape(shape)
        out = Tensor(gamma.data.reshape(shape) * xhat + beta.data.reshape(shape))

        def bwd_eval(g):
            dg = (g * xhat).sum(axis=axes)
            db = g.sum(axis=axes)
            return (g * (gamma.data * inv).reshape(shape), dg, db)

        return record("batch_norm", (x, gamma, beta), out, bwd_eval)

    if mode not in ("train", "batch"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")

    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = Tensor(gamma.data.reshape(shape) * xhat + beta.data.reshape(shape))

    if mode == "train":
        unbiased = var * m / max(m - 1, 1)
        stats.mean = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var = (1.0 - momentum) * stats.var + momentum * unbiased

    def bwd(g):
        dg = (g * xhat).sum(axis=axes)
        db = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        s1 = dxhat.sum(axis=axes).reshape(shape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
        dx = (inv.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
        return (dx, dg, db)

    return record("batch_norm", (x, gamma, beta), out, bwd)


# ---------------------------------------------------------------------------
# dispatcher

_OP_TABLE = {
    "identity": lambda inputs, attrs: identity(*inputs),
    "conv3x3": lambda inputs, attrs: _conv_checked(3, inputs, attrs),
    "conv5x5": lambda inputs, attrs: _conv_checked(5, inputs, attrs),
    "sepconv3x3": lambda inputs, attrs: _sepconv_checked(3, inputs),
    "sepconv5x5": lambda inputs, attrs: _sepconv_checked(5, inputs),
    "maxpool3x3": lambda inputs, attrs: max_pool2d(inputs[0], 3),
    "avgpool3x3": lambda inputs, attrs: avg_pool2d(inputs[0], 3),
    "dense": lambda inputs, attrs: dense(*inputs),
    "relu": lambda inputs, attrs: relu(*inputs),
    "batch_norm": lambda inputs, attrs: batch_norm(*inputs, **attrs),
    "add": lambda inputs, attrs: add(*inputs),
    "global_avg_pool": lambda inputs, attrs: global_avg_pool(*inputs),
    "softmax": lambda inputs, attrs: softmax(*inputs),
}


def _conv_checked(k, inputs, attrs):
    w = inputs[1]
    _require(
        w.shape[2:] == (k, k),
        f"conv{k}x{k}: weight kernel {w.shape} does not match {k}x{k}",
    )
    return conv2d(*inputs, **attrs)


def _sepconv_checked(k, inputs):
    dw = inputs[1]
    _require(
        dw.shape[1:] == (k, k),
        f"sepconv{k}x{k}: depthwise kernel {dw.shape} does not match {k}x{k}",
    )
    return sepconv2d(*inputs)


def forward_op(op_kind: str, inputs, attributes: dict | None = None) -> Tensor:
    """Dispatch an op by name; records on the active tape via the op itself."""
    if op_kind not in _OP_TABLE:
        raise ValueError(f"forward_op: unknown op kind {op_kind!r}")
    return _OP_TABLE[op_kind](tuple(inputs), dict(attributes or {}))
