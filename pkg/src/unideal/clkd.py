"""Curriculum knowledge distillation between a global (teacher) head and a
local (student) head.

Per batch: score every sample by how well teacher and student agree, keep the
``kept`` most-agreeing samples (ties included), and distill only on those.
The kept count grows from one sample to the full batch over training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, InvalidInputError, ShapeError

METRIC_KINDS = {"cosine": kernels.COSINE, "inv_l1": kernels.INV_L1, "inv_l2": kernels.INV_L2}
SCHEDULE_MODES = ("linear_kept", "threshold_index", "full")
KD_REDUCTIONS = ("sum", "batchmean")


@dataclass(frozen=True)
class SimilarityMetric:
    kind: str = "cosine"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ConfigurationError(
                f"unknown metric {self.kind!r}; expected one of {sorted(METRIC_KINDS)}"
            )
        if not self.epsilon > 0:
            raise ConfigurationError("metric epsilon must be positive")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Maps a training step to the number of samples kept per batch.

    ``linear_kept`` grows the kept count linearly from 1 to B. ``threshold_index``
    applies the threshold index ``round(p * B)`` with p falling linearly from
    1/B to 0. ``full`` always keeps the whole batch (plain distillation).
    """

    total_steps: int
    mode: str = "linear_kept"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be at least 1")
        if self.mode not in SCHEDULE_MODES:
            raise ConfigurationError(f"unknown schedule mode {self.mode!r}")


@dataclass
class MaskedBatchLoss:
    loss: float
    kept_mask: np.ndarray
    kept_count: int
    grad: np.ndarray


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def kept_count(step: int, schedule: CurriculumSchedule, batch_size: int) -> int:
    if batch_size < 1:
        raise InvalidInputError("batch size must be positive")
    if not 0 <= step < schedule.total_steps:
        raise InvalidInputError(f"step {step} outside [0, {schedule.total_steps})")
    last = schedule.total_steps - 1
    if schedule.mode == "full":
        return batch_size
    if schedule.mode == "linear_kept":
        if last == 0:
            return batch_size
        kept = _round_half_up(1 + (batch_size - 1) * step / last)
    else:
        p = (1.0 / batch_size) * (1.0 - step / last) if last else 0.0
        kept = _round_half_up(p * batch_size) + 1
    return max(1, min(batch_size, kept))


def _pair(teacher_logits, student_logits) -> tuple[np.ndarray, np.ndarray]:
    t = np.ascontiguousarray(teacher_logits, dtype=np.float64)
    s = np.ascontiguousarray(student_logits, dtype=np.float64)
    if t.ndim != 2 or t.shape != s.shape:
        raise ShapeError(f"teacher {t.shape} and student {s.shape} logits must be equal-shape matrices")
    if t.shape[0] < 1:
        raise InvalidInputError("empty batch")
    return t, s


def mutual_eval_scores(teacher_logits, student_logits, metric: SimilarityMetric = SimilarityMetric()) -> np.ndarray:
    t, s = _pair(teacher_logits, student_logits)
    return kernels.mutual_scores(t, s, METRIC_KINDS[metric.kind], metric.epsilon)


def adjustable_threshold(scores, kept: int) -> float:
    """The ``kept``-th largest score."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidInputError("empty score vector")
    if not 1 <= kept <= s.size:
        raise InvalidInputError(f"kept={kept} outside [1, {s.size}]")
    return float(np.sort(s)[s.size - kept])


def clkd_loss(teacher_logits, student_logits, threshold: float, scores, reduction: str = "sum") -> MaskedBatchLoss:
    """Summed KL(softmax(teacher) || softmax(student)) over samples scoring at
    least ``threshold``; gradient is with respect to the student logits.

    ``reduction="batchmean"`` divides loss and gradient by the batch size,
    putting the term on the same per-sample scale as a batch-mean
    cross-entropy. Masked-out rows still count in the divisor.
    """
    if reduction not in KD_REDUCTIONS:
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    t, s = _pair(teacher_logits, student_logits)
    sc = np.asarray(scores, dtype=np.float64).ravel()
    if sc.shape[0] != t.shape[0]:
        raise ShapeError("one score per batch row is required")
    mask = sc >= threshold
    loss, grad = kernels.masked_kl(t, s, mask.view(np.uint8))
    if reduction == "batchmean":
        n = t.shape[0]
        loss /= n
        grad /= n
    return MaskedBatchLoss(loss, mask, int(mask.sum()), grad)


def clkd_batch(
    teacher_logits, student_logits, metric: SimilarityMetric, kept: int, reduction: str = "sum"
) -> MaskedBatchLoss:
    """Score, threshold and masked loss in one call."""
    scores = mutual_eval_scores(teacher_logits, student_logits, metric)
    return clkd_loss(teacher_logits, student_logits, adjustable_threshold(scores, kept), scores, reduction)


def combined_objective(ce: tuple[float, np.ndarray], cl: MaskedBatchLoss, alpha: float) -> tuple[float, np.ndarray]:
    """``L_CE + alpha/2 * L_CL`` and its gradient wrt the student logits.

    Backpropagation is linear, so backpropagating this gradient yields the
    parameter gradient of the combined loss.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    ce_loss, ce_grad = ce
    if alpha == 0:
        return ce_loss, ce_grad
    if cl.grad.shape != ce_grad.shape:
        raise ShapeError("cross-entropy and distillation gradients differ in shape")
    w = alpha / 2.0
    return ce_loss + w * cl.loss, ce_grad + w * cl.grad
