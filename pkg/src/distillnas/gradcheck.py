"""Central finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(
    function: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``function`` must map a tensor to a scalar tensor and be evaluable at the
    perturbed points.  NaN anywhere propagates into the returned value.
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = function(x)
    analytic = backward(tape, loss, [x])[x].data

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = function(x).item()
        flat[i] = orig - eps
        fm = function(x).item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    err = np.abs(analytic - numeric) / denom
    return float(np.max(err)) if err.size else 0.0
