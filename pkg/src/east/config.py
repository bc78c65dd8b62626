"""Training-system selection and hyper-parameters."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

from .distance import MeasureKind
from .errors import InvalidConfig, WeightOutOfRange


class Variant(enum.Enum):
    BASELINE = "baseline"
    TEACHER_LR = "teacher-lr"
    KD = "kd"
    EAST_COS_DIFF = "east-cos-diff"
    EAST_FINAL = "east-final"
    EAST_ALL = "east-all"
    EAST_KD = "east-kd"

    @property
    def uses_embeddings(self) -> bool:
        return self in (Variant.EAST_COS_DIFF, Variant.EAST_FINAL, Variant.EAST_ALL, Variant.EAST_KD)

    @property
    def uses_teacher_model(self) -> bool:
        return self in (Variant.KD, Variant.EAST_KD)


@dataclass(frozen=True)
class SystemConfig:
    variant: Variant = Variant.BASELINE
    lambda_: float = 0.0
    alpha: float = 0.5
    temperature: float = 2.0
    measure: MeasureKind = MeasureKind.DISTANCE_CORRELATION
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    patience: int = 10
    seed: int = 0
    stage_widths: tuple = (32, 32)
    stage_pools: tuple = (2, 2)
    teacher_epochs: int = 500
    teacher_lr: float = 0.1

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.measure, str):
            object.__setattr__(self, "measure", MeasureKind(self.measure))
        if self.variant is Variant.EAST_COS_DIFF:
            object.__setattr__(self, "measure", MeasureKind.COS_DIFF)
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "stage_pools", tuple(int(p) for p in self.stage_pools))
        for name in ("lambda_", "alpha"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise WeightOutOfRange(f"{name.rstrip('_')} must lie in [0, 1], got {value}")
        if not self.temperature > 0:
            raise WeightOutOfRange("temperature must be positive")
        if self.epochs < 1 or self.batch_size < 2 or self.patience < 1:
            raise InvalidConfig("epochs and patience must be >= 1 and batch_size >= 2")
        if not self.lr > 0 or not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig("lr must be positive and momentum in [0, 1)")
        if len(self.stage_widths) != len(self.stage_pools) or not self.stage_widths:
            raise InvalidConfig("stage_widths and stage_pools must be non-empty and equally long")
        if any(w < 1 for w in self.stage_widths) or any(p < 1 for p in self.stage_pools):
            raise InvalidConfig("stage widths and pooling factors must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["measure"] = self.measure.value
        d["stage_widths"] = list(self.stage_widths)
        d["stage_pools"] = list(self.stage_pools)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)
