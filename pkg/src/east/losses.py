"""Prediction, distillation and composite training objectives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor
from .config import Variant
from .errors import DimensionMismatch, EmptyMask, MissingComponent, WeightOutOfRange


@dataclass(frozen=True)
class LabelBatch:
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        m = np.asarray(self.mask, dtype=np.float64)
        if t.shape != m.shape:
            raise DimensionMismatch(f"targets {t.shape} and mask {m.shape} differ")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class CompositeWeights:
    lambda_: float = 0.0
    alpha: float = 0.5
    temperature: float = 2.0

    def __post_init__(self):
        _check_weight("lambda", self.lambda_)
        _check_weight("alpha", self.alpha)
        if not self.temperature > 0:
            raise WeightOutOfRange(f"temperature must be positive, got {self.temperature}")


def _check_weight(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise WeightOutOfRange(f"{name} must lie in [0, 1], got {value}")


def _masked_mean(per_entry: Tensor, mask: np.ndarray) -> Tensor:
    count = mask.sum()
    if count == 0:
        raise EmptyMask("every label in the batch is masked out")
    return (per_entry * mask).sum() * (1.0 / count)


def masked_bce(logits, labels: LabelBatch) -> Tensor:
    """Binary cross-entropy with logits, averaged over observed labels only.

    Uses softplus(z) - y*z, which equals -[y log s(z) + (1-y) log(1-s(z))].
    Masked-out entries contribute exactly zero to value and gradient.
    """
    logits = as_tensor(logits)
    if logits.shape != labels.targets.shape:
        raise DimensionMismatch(f"logits {logits.shape} vs labels {labels.targets.shape}")
    mask = labels.mask
    targets = np.where(mask > 0, labels.targets, 0.0)
    z = logits * mask
    return _masked_mean(z.softplus() - z * targets, mask)


def kd_loss(student_logits, teacher_logits, temperature: float, labels_mask) -> Tensor:
    """Multi-label distillation: BCE between s(t/T) and s(s/T), scaled by T^2.

    The teacher side is a constant; only ``student_logits`` receives gradient.
    """
    if not temperature > 0:
        raise WeightOutOfRange(f"temperature must be positive, got {temperature}")
    student_logits = as_tensor(student_logits)
    teacher = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits,
                         dtype=np.float64)
    mask = np.asarray(labels_mask, dtype=np.float64)
    if student_logits.shape != teacher.shape or mask.shape != teacher.shape:
        raise DimensionMismatch("student logits, teacher logits and mask must share a shape")
    soft = Tensor(teacher / temperature).sigmoid().data
    x = student_logits * (mask / temperature)
    return _masked_mean(x.softplus() - x * soft, mask) * (temperature ** 2)


def composite_loss(pred, reg, lambda_: float) -> Tensor:
    """(1 - lambda) * pred + lambda * reg."""
    _check_weight("lambda", lambda_)
    return as_tensor(pred) * (1.0 - lambda_) + as_tensor(reg) * lambda_


def system_loss(config, pred, kd=None, reg_by_stage: Sequence | None = None) -> Tensor:
    """Combine loss terms according to ``config.variant``.

    ``reg_by_stage`` lists regularization losses from the first stage to the
    last; Final-style variants use only the last entry, EAsT_All their mean.
    """
    v = config.variant
    if v in (Variant.BASELINE, Variant.TEACHER_LR):
        return as_tensor(pred)
    if v is Variant.KD:
        if kd is None:
            raise MissingComponent("KD needs a distillation term")
        return composite_loss(pred, kd, config.alpha)
    if not reg_by_stage:
        raise MissingComponent(f"{v.value} needs regularization terms")
    if v in (Variant.EAST_COS_DIFF, Variant.EAST_FINAL):
        return composite_loss(pred, reg_by_stage[-1], config.lambda_)
    if v is Variant.EAST_ALL:
        total = as_tensor(reg_by_stage[0])
        for r in reg_by_stage[1:]:
            total = total + r
        return composite_loss(pred, total * (1.0 / len(reg_by_stage)), config.lambda_)
    if v is Variant.EAST_KD:
        if kd is None:
            raise MissingComponent("EAsT_KD needs a distillation term")
        return composite_loss(composite_loss(pred, kd, config.alpha), reg_by_stage[-1], config.lambda_)
    raise ValueError(f"unknown variant {v!r}")
