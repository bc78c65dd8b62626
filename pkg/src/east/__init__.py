"""Student networks regularized toward frozen teacher embeddings, with KD baselines."""

__version__ = "0.1.0"

from .config import SystemConfig, Variant
from .data import LabeledClip, SplitSpec, SynthConfig, generate, read_container, split, write_container
from .distance import MeasureKind, cos_diff_loss, dcor_loss, regularization_loss
from .errors import ConfigError, EastError, FormatError
from .losses import LabelBatch, composite_loss, kd_loss, masked_bce, system_loss
from .metrics import MetricsReport, evaluate
from .models import StudentNet, TeacherLR, load_checkpoint, save_checkpoint, teacher_fit
from .trainer import limited_data_experiment, sweep_lambda, train_system

__all__ = [
    "ConfigError", "EastError", "FormatError", "LabelBatch", "LabeledClip", "MeasureKind", "MetricsReport",
    "SplitSpec", "StudentNet", "SynthConfig", "SystemConfig", "TeacherLR", "Variant", "composite_loss",
    "cos_diff_loss", "dcor_loss", "evaluate", "generate", "kd_loss", "limited_data_experiment", "load_checkpoint",
    "masked_bce", "read_container", "regularization_loss", "save_checkpoint", "split", "sweep_lambda",
    "system_loss", "teacher_fit", "train_system", "write_container",
]
