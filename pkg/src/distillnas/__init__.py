"""Oracle distillation from ensemble teachers plus backbone-anchored
architecture search, on a small numpy autodiff core.

Submodules are imported lazily so the CLI can pin BLAS thread counts
before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor",
    "ops",
    "nn",
    "backbone",
    "optim",
    "losses",
    "gradcheck",
    "serialize",
    "search_space",
    "supernet",
    "controller",
    "selection",
    "ensemble",
    "data",
    "training",
    "config",
    "harness",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
