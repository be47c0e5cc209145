"""Hybrid vision transformer for deepfake detection with a distilled CNN
teacher, built on a small numpy autograd engine."""

from .backbone import Backbone, BackboneConfig, Teacher, teacher_logit
from .config import ExperimentConfig, load_config
from .data import DatasetConfig, generate_dataset, generate_sample, make_splits
from .metrics import confusion_and_f1, export_correlation, log_loss, make_records, roc_auc
from .model import HybridViT, ModelConfig, PatchConfig, forward, predict_probability
from .tensor import Tape, Tensor, backward, no_grad
from .train import LossConfig, TrainRunConfig, distillation_loss, train_student, train_teacher

__version__ = "0.1.0"

__all__ = [
    "Backbone", "BackboneConfig", "Teacher", "teacher_logit",
    "ExperimentConfig", "load_config",
    "DatasetConfig", "generate_dataset", "generate_sample", "make_splits",
    "confusion_and_f1", "export_correlation", "log_loss", "make_records", "roc_auc",
    "HybridViT", "ModelConfig", "PatchConfig", "forward", "predict_probability",
    "Tape", "Tensor", "backward", "no_grad",
    "LossConfig", "TrainRunConfig", "distillation_loss", "train_student", "train_teacher",
]
