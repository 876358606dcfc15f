"""Finite-difference verification of every op's adjoint."""

import numpy as np
import pytest

from distillnas import ops
from distillnas.gradcheck import grad_check
from distillnas.tensor import Tensor

TOL = 1e-6  # f64 central differences at eps=1e-5 sit around 1e-8


def _scalarize(rng, fn):
    """Project an arbitrary-output function to a scalar with fixed weights."""
    w = {}

    def wrapped(t):
        y = fn(t)
        if y.size == 1:
            return y if y.data.ndim else ops.affine(y, 1.0)
        if "w" not in w:
            w["w"] = rng.normal(size=y.shape)
        return ops.dot_const(y, w["w"])

    return wrapped


@pytest.mark.parametrize(
    "name, fn, shape",
    [
        ("affine", lambda t: ops.affine(t, -1.7, 0.3), (3, 4)),
        ("relu", ops.relu, (3, 4)),
        ("sigmoid", ops.sigmoid, (3, 4)),
        ("tanh", ops.tanh, (3, 4)),
        ("softmax", ops.softmax, (3, 5)),
        ("log_softmax", ops.log_softmax, (3, 5)),
        ("sum", ops.sum_all, (4, 2)),
        ("mean", ops.mean_all, (4, 2)),
        ("gap", ops.global_avg_pool, (2, 3, 4, 4)),
        ("maxpool", lambda t: ops.max_pool2d(t, 3), (2, 2, 5, 5)),
        ("avgpool", lambda t: ops.avg_pool2d(t, 3), (2, 2, 5, 5)),
        ("subsample", lambda t: ops.subsample_pad_channels(t, 4), (2, 2, 6, 6)),
    ],
)
def test_elementwise_and_pool_grads(name, fn, shape):
    rng = np.random.default_rng(hashify(name))
    x = rng.normal(size=shape)
    if name == "relu":
        x = x + 0.05 * np.sign(x)  # stay off the kink
    if name == "maxpool":
        x = x + np.linspace(0, 1, x.size).reshape(shape)  # break argmax ties
    err = grad_check(_scalarize(rng, fn), Tensor(x))
    assert err < TOL, f"{name}: {err:.3e}"


def hashify(s: str) -> int:
    # stable per-case seed (hash() is randomized per process)
    return sum(ord(c) * 31**i for i, c in enumerate(s)) % 2**32


def test_dense_grads_all_arguments(rng):
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    proj = rng.normal(size=(4, 2))

    def wrt_x(t):
        return ops.dot_const(ops.dense(t, Tensor(w), Tensor(b)), proj)

    def wrt_w(t):
        return ops.dot_const(ops.dense(Tensor(x), t, Tensor(b)), proj)

    def wrt_b(t):
        return ops.dot_const(ops.dense(Tensor(x), Tensor(w), t), proj)

    assert grad_check(wrt_x, Tensor(x)) < TOL
    assert grad_check(wrt_w, Tensor(w)) < TOL
    assert grad_check(wrt_b, Tensor(b)) < TOL


def test_conv2d_grads_all_arguments(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    proj = rng.normal(size=(2, 4, 5, 5))

    assert grad_check(
        lambda t: ops.dot_const(ops.conv2d(t, Tensor(w), Tensor(b)), proj), Tensor(x)
    ) < TOL
    assert grad_check(
        lambda t: ops.dot_const(ops.conv2d(Tensor(x), t, Tensor(b)), proj), Tensor(w)
    ) < TOL
    assert grad_check(
        lambda t: ops.dot_const(ops.conv2d(Tensor(x), Tensor(w), t), proj), Tensor(b)
    ) < TOL


def test_conv2d_strided_grad(rng):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    proj = rng.normal(size=(1, 3, 3, 3))
    err = grad_check(
        lambda t: ops.dot_const(ops.conv2d(t, Tensor(w), stride=2, padding=1), proj),
        Tensor(x),
    )
    assert err < TOL


def test_sepconv_grads(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    dw = rng.normal(size=(3, 3, 3))
    pw = rng.normal(size=(4, 3, 1, 1))
    proj = rng.normal(size=(2, 4, 5, 5))
    assert grad_check(
        lambda t: ops.dot_const(ops.sepconv2d(t, Tensor(dw), Tensor(pw)), proj), Tensor(x)
    ) < TOL
    assert grad_check(
        lambda t: ops.dot_const(ops.sepconv2d(Tensor(x), t, Tensor(pw)), proj), Tensor(dw)
    ) < TOL
    assert grad_check(
        lambda t: ops.dot_const(ops.sepconv2d(Tensor(x), Tensor(dw), t), proj), Tensor(pw)
    ) < TOL


@pytest.mark.parametrize("mode", ["train", "batch", "eval"])
def test_batch_norm_grads(rng, mode):
    x = rng.normal(size=(6, 3, 4, 4))
    gamma = rng.normal(size=3) + 1.5
    beta = rng.normal(size=3)
    proj = rng.normal(size=(6, 3, 4, 4))
    base = ops.BnStats(3)
    base.mean = rng.normal(size=3)
    base.var = rng.uniform(0.5, 2.0, size=3)

    def run(xx, gg, bb):
        # fresh stats copy per call so train-mode buffer updates don't bleed
        # into the finite-difference evaluations
        return ops.dot_const(
            ops.batch_norm(xx, gg, bb, base.copy(), mode=mode), proj
        )

    assert grad_check(lambda t: run(t, Tensor(gamma), Tensor(beta)), Tensor(x)) < TOL
    assert grad_check(lambda t: run(Tensor(x), t, Tensor(beta)), Tensor(gamma)) < TOL
    assert grad_check(lambda t: run(Tensor(x), Tensor(gamma), t), Tensor(beta)) < TOL


def test_grad_check_catches_wrong_adjoint(rng):
    # negative control: an op with a deliberately scaled adjoint must fail
    from distillnas.tensor import record

    def broken_double(t):
        out = Tensor(2.0 * t.data)
        return record("broken", (t,), out, lambda g: (3.0 * g,))

    err = grad_check(lambda t: ops.sum_all(broken_double(t)), Tensor(rng.normal(size=(3,))))
    assert err > 0.1


def test_grad_check_composite_chain(rng):
    # conv -> bn -> relu -> pool -> gap -> dense -> ce, checked wrt the image
    from distillnas.losses import cross_entropy

    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.5)
    gamma = Tensor(np.ones(4))
    beta = Tensor(np.zeros(4))
    head_w = Tensor(rng.normal(size=(4, 3)) * 0.5)
    stats = ops.BnStats(4)
    y = np.array([0, 2])

    def loss_of(t):
        h = ops.relu(ops.batch_norm(ops.conv2d(t, w), gamma, beta, stats.copy(), mode="batch"))
        h = ops.global_avg_pool(ops.max_pool2d(h, 3))
        return cross_entropy(ops.dense(h, head_w), y)

    err = grad_check(loss_of, Tensor(rng.normal(size=(2, 3, 6, 6))))
    assert err < 1e-5
