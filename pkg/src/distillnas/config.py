"""Flat-JSON experiment configuration, seed streams, and run records.

Every knob lives in one flat dict; configs are validated field by field
before any compute starts (unknown keys and wrong types are named in the
error). All randomness derives from the single root `seed` split into
named streams, so whole-pipeline reruns are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import BackboneSpec, resnet_cifar, toy_backbone
from .optim import TrainSchedule, default_milestones
from .search_space import backbone_param_count
from .training import LOSS_KINDS


class ConfigError(ValueError):
    pass


_DATASET_KINDS = ("gaussian", "textured", "external")
_BUDGET_MODES = ("multiple", "absolute")
_BACKBONES = ("toy", "resnet20", "resnet32", "resnet56", "resnet110")

# name: (default, type, one-line doc). bool precedes int in checks since
# bool is an int subclass.
DEFAULTS: dict[str, tuple] = {
    "dataset_kind": ("gaussian", str, "synthetic family or 'external'"),
    "num_classes": (4, int, "number of classes"),
    "train_size": (1200, int, "generated train pool size (val is carved from it)"),
    "test_size": (800, int, "generated test size"),
    "image_size": (16, int, "square image side"),
    "channels": (3, int, "image channels"),
    "separation": (0.4, float, "gaussian class separation (prototype scale vs unit noise)"),
    "dataset_noise": (0.6, float, "textured-patch additive noise level"),
    "augment": (False, bool, "pad-2 random crop + horizontal flip during training"),
    "external_path": ("", str, "source binary for dataset_kind=external"),
    "backbone": ("toy", str, "student backbone id"),
    "slots": (2, int, "total add-on slots L, split evenly over stages"),
    "ensemble_size": (5, int, "teacher ensemble member count N"),
    "search_loss": ("od", str, "loss used for shared-weight training (ce|kd|od)"),
    "train_loss": ("od", str, "loss used for final retraining (ce|kd|od)"),
    "temperature": (3.0, float, "distillation temperature T"),
    "balance": (0.0, float, "lambda weight on CE inside the distillation loss"),
    "memory_budget": (2.0, float, "parameter budget M"),
    "memory_budget_mode": ("multiple", str, "'multiple' of backbone params or 'absolute'"),
    "teacher_epochs": (12, int, "epochs per ensemble member"),
    "student_epochs": (15, int, "epochs for student/retrain runs"),
    "batch_size": (128, int, "SGD batch size"),
    "base_lr": (0.1, float, "initial learning rate"),
    "warmup_iters": (0, int, "iterations at warmup_lr before the schedule"),
    "warmup_lr": (0.01, float, "warm-up learning rate"),
    "momentum": (0.9, float, "SGD momentum (Nesterov)"),
    "weight_decay": (1e-4, float, "L2 weight decay"),
    "search_warmup_epochs": (3, int, "shared-weight epochs on the neutral genome before sampling"),
    "search_lr": (0.02, float, "learning rate for sampled shared-weight steps"),
    "search_rounds": (3, int, "alternations of shared-weight epoch + controller phase"),
    "controller_updates_per_round": (6, int, "REINFORCE updates per round"),
    "samples_per_update": (10, int, "genomes sampled per REINFORCE update"),
    "controller_lr": (3e-3, float, "controller SGD learning rate"),
    "controller_hidden": (64, int, "controller GRU hidden size"),
    "entropy_coef": (0.0, float, "optional entropy bonus coefficient"),
    "baseline_beta": (0.95, float, "reward moving-average decay"),
    "reward_batch": (64, int, "held-out batch size for search rewards"),
    "n_candidates": (50, int, "candidates sampled at final selection"),
    "seeds": ([0, 1, 2], list, "seeds for multi-seed training runs"),
    "seed": (0, int, "root seed for the named streams"),
    "out_dir": ("runs/default", str, "artifact output directory"),
}

_CHOICES = {
    "dataset_kind": _DATASET_KINDS,
    "memory_budget_mode": _BUDGET_MODES,
    "backbone": _BACKBONES,
    "search_loss": LOSS_KINDS,
    "train_loss": LOSS_KINDS,
}

_POSITIVE = (
    "num_classes", "train_size", "test_size", "image_size", "channels",
    "slots", "ensemble_size", "teacher_epochs", "student_epochs",
    "batch_size", "search_rounds", "controller_updates_per_round",
    "samples_per_update", "controller_hidden", "reward_batch",
    "n_candidates",
)


def validate_config(cfg: dict) -> None:
    errors = []
    for key in cfg:
        if key not in DEFAULTS:
            errors.append(f"{key}: unknown field")
    for key, (default, typ, _) in DEFAULTS.items():
        if key not in cfg:
            errors.append(f"{key}: missing")
            continue
        val = cfg[key]
        if typ is float:
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        elif typ is int:
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif typ is bool:
            ok = isinstance(val, bool)
        elif typ is list:
            ok = isinstance(val, list) and all(
                isinstance(s, int) and not isinstance(s, bool) for s in val
            )
        else:
            ok = isinstance(val, str)
        if not ok:
            errors.append(f"{key}: expected {typ.__name__}, got {type(val).__name__} {val!r}")
            continue
        if key in _CHOICES and val not in _CHOICES[key]:
            errors.append(f"{key}: {val!r} not in {_CHOICES[key]}")
        if key in _POSITIVE and val <= 0:
            errors.append(f"{key}: must be positive, got {val}")
    if not errors:
        if not 0.0 <= cfg["balance"] <= 1.0:
            errors.append(f"balance: must lie in [0, 1], got {cfg['balance']}")
        if cfg["temperature"] < 1.0:
            errors.append(f"temperature: must be >= 1, got {cfg['temperature']}")
        if cfg["memory_budget"] <= 0:
            errors.append(f"memory_budget: must be positive, got {cfg['memory_budget']}")
        if not cfg["seeds"]:
            errors.append("seeds: must list at least one seed")
        if not 0.0 <= cfg["baseline_beta"] < 1.0:
            errors.append(f"baseline_beta: must lie in [0, 1), got {cfg['baseline_beta']}")
        if cfg["search_warmup_epochs"] < 0:
            errors.append(f"search_warmup_epochs: must be >= 0, got {cfg['search_warmup_epochs']}")
        if cfg["search_lr"] <= 0:
            errors.append(f"search_lr: must be positive, got {cfg['search_lr']}")
        if cfg["dataset_kind"] == "external" and not cfg["external_path"]:
            errors.append("external_path: required when dataset_kind is 'external'")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))


def default_config() -> dict:
    return {k: (list(v[0]) if isinstance(v[0], list) else v[0]) for k, v in DEFAULTS.items()}


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid with the JSON file (if any), overlaid with
    explicit overrides; fully validated."""
    cfg = default_config()
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        cfg.update(loaded)
    if overrides:
        cfg.update(overrides)
    # ints are acceptable where floats are expected; normalize for hashing
    for key, (default, typ, _) in DEFAULTS.items():
        if typ is float and key in cfg and isinstance(cfg[key], int) and not isinstance(cfg[key], bool):
            cfg[key] = float(cfg[key])
    validate_config(cfg)
    return cfg


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def code_hash() -> str:
    """Content hash over the package's source files (a stand-in for a VCS
    revision in environments without one)."""
    h = hashlib.sha256()
    pkg = Path(__file__).parent
    for src in sorted(pkg.glob("*.py")):
        h.update(src.name.encode())
        h.update(src.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# seed streams

STREAMS = ("data", "teacher", "search", "controller", "sampling", "select", "retrain", "eval")


def stream(root_seed: int, name: str, *extras: int) -> np.random.Generator:
    """Named child generator of the root seed; extras distinguish
    per-member / per-row / per-run-seed substreams.

    The extras count is folded into the entropy because SeedSequence treats
    trailing zeros as no-ops: without it, stream(s, n) and stream(s, n, 0)
    would be the same generator.
    """
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}, expected one of {STREAMS}")
    entropy = [int(root_seed), STREAMS.index(name), len(extras), *(int(e) for e in extras)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# derived objects


def backbone_from_config(cfg: dict) -> BackboneSpec:
    name = cfg["backbone"]
    if name == "toy":
        return toy_backbone(cfg["num_classes"], cfg["channels"], cfg["image_size"])
    depth = int(name.removeprefix("resnet"))
    return resnet_cifar(depth, cfg["num_classes"], cfg["channels"], cfg["image_size"])


def resolve_budget(cfg: dict, spec: BackboneSpec) -> int:
    base = cfg["memory_budget"]
    if cfg["memory_budget_mode"] == "absolute":
        return int(base)
    return int(round(base * backbone_param_count(spec)))


def _schedule(cfg: dict, epochs: int) -> TrainSchedule:
    return TrainSchedule(
        epochs=epochs,
        batch_size=cfg["batch_size"],
        base_lr=cfg["base_lr"],
        milestones=default_milestones(epochs),
        warmup_iters=cfg["warmup_iters"],
        warmup_lr=cfg["warmup_lr"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
    )


def teacher_schedule(cfg: dict) -> TrainSchedule:
    return _schedule(cfg, cfg["teacher_epochs"])


def student_schedule(cfg: dict) -> TrainSchedule:
    return _schedule(cfg, cfg["student_epochs"])


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    config_hash: str
    code_hash: str
    metrics: list  # per-seed dicts, each with at least "seed" and "test_acc"

    def summary(self) -> dict:
        accs = np.array([m["test_acc"] for m in self.metrics], dtype=np.float64)
        return {
            "n_seeds": len(self.metrics),
            "mean_test_acc": float(accs.mean()),
            "std_test_acc": float(accs.std()),
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "code_hash": self.code_hash,
                "metrics": self.metrics,
                "summary": self.summary(),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        obj = json.loads(text)
        rec = cls(obj["config_hash"], obj["code_hash"], obj["metrics"])
        stored = obj.get("summary")
        if stored is not None and stored != rec.summary():
            raise ValueError("run record summary does not match per-seed metrics")
        return rec
