"""Ensemble teacher: N same-architecture members differing only in seed.

Correctness uses the strict unique-top rule shared with the oracle loss
masks (a tie at the top counts as incorrect), so oracle accuracy >= every
member accuracy holds exactly, not just up to tie-breaking.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backbone import BackboneSpec, build_network
from .data import DataBundle
from .losses import oracle_target
from .nn import Network, predict_logits
from .optim import TrainSchedule
from .serialize import load_tensors, save_tensors
from .training import TrainResult, train_model

MANIFEST_NAME = "manifest.json"
LOGITS_NAME = "logits.odtw"


def train_ensemble(
    bundle: DataBundle,
    spec: BackboneSpec,
    schedule: TrainSchedule,
    member_seeds: list[int],
    log=None,
) -> tuple[list[Network], list[TrainResult]]:
    members, results = [], []
    for seed in member_seeds:
        rng = np.random.default_rng(seed)
        net = build_network(spec, rng)
        res = train_model(net, bundle, schedule, rng, loss_kind="ce")
        if log is not None:
            log(f"member seed {seed}: test acc {res.test_acc:.3f}")
        members.append(net)
        results.append(res)
    return members, results


def collect_logits(members: list[Network], x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Clean-image eval-mode logits, stacked [n_members, n_examples, classes]."""
    return np.stack([predict_logits(m, x, batch_size) for m in members])


def correct_mask(member_logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """[B, N] bool: member's top-1 is uniquely the label."""
    return oracle_target(member_logits, labels).mask


def member_accuracies(member_logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return correct_mask(member_logits, labels).mean(axis=0)


def oracle_accuracy(member_logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of examples on which at least one member is correct."""
    return float(correct_mask(member_logits, labels).any(axis=1).mean())


def average_logits(member_logits: np.ndarray) -> np.ndarray:
    return np.asarray(member_logits, dtype=np.float64).mean(axis=0)


def ensemble_accuracy(member_logits: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of the averaged-logit prediction, same strict top-1 rule."""
    mean = average_logits(member_logits)
    return float(correct_mask(mean[None], labels).mean())


def correctness_histogram(member_logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Fraction of examples with exactly k correct members, bins 0..N."""
    mask = correct_mask(member_logits, labels)
    n = mask.shape[1]
    counts = np.bincount(mask.sum(axis=1), minlength=n + 1)
    return counts / mask.shape[0]


def save_ensemble(
    out_dir,
    members: list[Network],
    member_seeds: list[int],
    results: list[TrainResult],
    bundle: DataBundle,
    spec: BackboneSpec,
) -> dict:
    """Persist member checkpoints, the cached logits for every split, the
    manifest, and the test-set correctness histogram CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logit_entries = {}
    split_logits = {}
    for split, x in (("train", bundle.train_x), ("val", bundle.val_x), ("test", bundle.test_x)):
        stack = collect_logits(members, x)
        split_logits[split] = stack
        for i in range(len(members)):
            logit_entries[f"member{i}.{split}_logits"] = stack[i]
    save_tensors(out / LOGITS_NAME, logit_entries)
    for i, net in enumerate(members):
        save_tensors(out / f"member{i}.odtw", net.state_dict())

    test_stack = split_logits["test"]
    hist = correctness_histogram(test_stack, bundle.test_y)
    member_acc = member_accuracies(test_stack, bundle.test_y)
    manifest = {
        "n_members": len(members),
        "member_seeds": list(map(int, member_seeds)),
        "backbone_id": spec.backbone_id,
        "num_classes": bundle.num_classes,
        "member_test_acc": [float(a) for a in member_acc],
        "avg_member_test_acc": float(member_acc.mean()),
        "oracle_test_acc": oracle_accuracy(test_stack, bundle.test_y),
        "ensemble_test_acc": ensemble_accuracy(test_stack, bundle.test_y),
        "histogram_test": [float(h) for h in hist],
        "logits_file": LOGITS_NAME,
        "final_train_acc": [r.train_acc for r in results],
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    with open(out / "histogram.csv", "w") as f:
        f.write("correct_members,fraction\n")
        for k, frac in enumerate(hist):
            f.write(f"{k},{frac:.6f}\n")
    return manifest


def load_manifest(teacher_dir) -> dict:
    path = Path(teacher_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"missing teacher manifest {path}")
    return json.loads(path.read_text())


def load_logits(teacher_dir) -> dict[str, np.ndarray]:
    """Member logit stacks per split: {"train": [N,n,C], "val": ..., "test": ...}."""
    manifest = load_manifest(teacher_dir)
    entries = load_tensors(Path(teacher_dir) / manifest["logits_file"])
    n = manifest["n_members"]
    out = {}
    for split in ("train", "val", "test"):
        out[split] = np.stack([entries[f"member{i}.{split}_logits"] for i in range(n)])
    return out
