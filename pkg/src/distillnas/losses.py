"""Classification and distillation losses.

Three training losses share one family: plain cross-entropy, the
temperature-scaled distillation loss (cross-entropy and softened-KL terms
balanced by lambda), and the ensemble-oracle variant that targets the average
logits of only the members that classify each example correctly, falling back
to cross-entropy for examples no member gets right.

Teacher logits are always plain arrays: no gradient flows to the teacher.
Batch reduction is the mean throughout.  All softmax computations are
log-sum-exp stabilized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import add, affine, dot_const, mean_all
from .tensor import ShapeError, Tensor, record


@dataclass(frozen=True)
class DistillConfig:
    """Temperature and cross-entropy/KL balance for distillation."""

    temperature: float = 3.0
    balance: float = 0.0

    def __post_init__(self):
        if not self.temperature >= 1.0:
            raise ValueError(
                f"temperature: must be >= 1 (softening premise), got {self.temperature}"
            )
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError(f"balance: must be in [0, 1], got {self.balance}")


@dataclass(frozen=True)
class OracleTarget:
    """Per-example correct-member mask and correct-member average logits.

    ``target_logits[i]`` is meaningful iff ``has_target[i]``; rows with an
    all-false mask carry zeros and flag the cross-entropy fallback.
    """

    mask: np.ndarray  # [B, N] bool: member j correct on example i
    target_logits: np.ndarray  # [B, C] float
    has_target: np.ndarray  # [B] bool


def _log_softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be [B,C], got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"cross_entropy: label {bad} out of range [0, {c})")
    return labels.astype(np.int64)


def ce_per_example(logits: Tensor, labels) -> Tensor:
    """Per-example negative log-likelihood, shape [B]."""
    labels = _check_labels(logits, labels)
    b = logits.shape[0]
    logp = _log_softmax_rows(logits.data)
    out = Tensor(-logp[np.arange(b), labels])

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        return (p * g[:, None],)

    return record("ce_per_example", (logits,), out, bwd)


def kl_per_example(student_logits: Tensor, teacher_logits: np.ndarray, temperature: float) -> Tensor:
    """Per-example T^2 * KL(softmax(t/T) || softmax(s/T)), shape [B].

    The teacher side is a constant array: gradients reach only the student.
    """
    if temperature <= 0:
        raise ValueError(f"kl_distill: temperature must be positive, got {temperature}")
    t_arr = np.asarray(teacher_logits, dtype=np.float64)
    if t_arr.shape != student_logits.shape:
        raise ShapeError(
            f"kl_distill: student {student_logits.shape} vs teacher {t_arr.shape}"
        )
    T = float(temperature)
    p = _softmax_rows(t_arr / T)
    logp = _log_softmax_rows(t_arr / T)
    logq = _log_softmax_rows(student_logits.data / T)
    out = Tensor(T * T * (p * (logp - logq)).sum(axis=-1))

    def bwd(g):
        q = _softmax_rows(student_logits.data / T)
        return (T * (q - p) * g[:, None],)

    return record("kl_per_example", (student_logits,), out, bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    return mean_all(ce_per_example(logits, labels))


def kl_distill(student_logits: Tensor, teacher_logits, temperature: float) -> Tensor:
    """Batch-mean temperature-scaled distillation KL."""
    t_arr = teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits
    return mean_all(kl_per_example(student_logits, t_arr, temperature))


def kd_loss(student_logits: Tensor, teacher_logits, labels, cfg: DistillConfig) -> Tensor:
    """balance * CE(student, labels) + (1 - balance) * KL(student, teacher)."""
    lam = cfg.balance
    ce = cross_entropy(student_logits, labels)
    kl = kl_distill(student_logits, teacher_logits, cfg.temperature)
    if lam == 1.0:
        return ce
    if lam == 0.0:
        return kl
    return add(affine(ce, lam), affine(kl, 1.0 - lam))


def oracle_target(member_logits, labels) -> OracleTarget:
    """Correct-member mask and their average logits, per example.

    ``member_logits`` is [N, B, C].  Member j is correct on example i iff its
    top logit is unique and at the label; ties count as incorrect.
    """
    ml = np.asarray(member_logits, dtype=np.float64)
    if ml.ndim != 3:
        raise ShapeError(f"oracle_target: member logits must be [N,B,C], got {ml.shape}")
    n, b, c = ml.shape
    if n < 1:
        raise ValueError("oracle_target: need at least one member")
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape != (b,):
        raise ShapeError(f"oracle_target: labels shape {labels.shape} != ({b},)")

    top = ml.max(axis=-1)  # [N, B]
    at_label = ml[:, np.arange(b), labels]  # [N, B]
    unique_top = (ml == top[..., None]).sum(axis=-1) == 1
    mask = ((at_label == top) & unique_top).T  # [B, N]

    counts = mask.sum(axis=1)  # [B]
    has_target = counts > 0
    weights = mask.T.astype(np.float64)  # [N, B]
    denom = np.maximum(counts, 1).astype(np.float64)
    target = np.einsum("nb,nbc->bc", weights, ml) / denom[:, None]
    target[~has_target] = 0.0
    return OracleTarget(mask=mask, target_logits=target, has_target=has_target)


def od_loss(student_logits: Tensor, member_logits, labels, cfg: DistillConfig) -> Tensor:
    """Oracle distillation: per example, the distillation loss against the
    correct-member average when any member is correct, else cross-entropy;
    batch loss is the mean of the per-example values."""
    tgt = oracle_target(member_logits, labels)
    b = student_logits.shape[0]
    lam = cfg.balance
    covered = tgt.has_target.astype(np.float64)

    # per-example weights for the two terms: covered rows take the
    # lambda-balanced distillation pair, uncovered rows plain CE
    w_ce = (covered * lam + (1.0 - covered)) / b
    w_kl = covered * (1.0 - lam) / b

    ce_vec = ce_per_example(student_logits, labels)
    if not np.any(covered) or lam == 1.0:
        return dot_const(ce_vec, w_ce) if lam != 1.0 else mean_all(ce_vec)
    kl_vec = kl_per_example(student_logits, tgt.target_logits, cfg.temperature)
    return add(dot_const(ce_vec, w_ce), dot_const(kl_vec, w_kl))
