"""crossnets: feature-interaction blocks for CTR models, a small autodiff
engine, analytic FLOPs accounting, and a deterministic benchmark harness."""

from .analysis import DegreeBound, FlopsReport, degree_bound, flops_report, param_count
from .blocks import (
    BlockConfig,
    FeatureField,
    FeatureSchema,
    MmoeConfig,
    Model,
    ModelConfig,
)
from .data import Dataset, SyntheticTaskSpec, shard, split, synth_generate, teacher_auc
from .engine import FlopCounter, Param, Tape, gradcheck
from .train import (
    TrainConfig,
    TrainingSummary,
    auc,
    bce_loss,
    checkpoint_load,
    checkpoint_save,
    train_run,
)

__version__ = "0.1.0"

__all__ = [
    "BlockConfig",
    "Dataset",
    "DegreeBound",
    "FeatureField",
    "FeatureSchema",
    "FlopCounter",
    "FlopsReport",
    "MmoeConfig",
    "Model",
    "ModelConfig",
    "Param",
    "SyntheticTaskSpec",
    "Tape",
    "TrainConfig",
    "TrainingSummary",
    "auc",
    "bce_loss",
    "checkpoint_load",
    "checkpoint_save",
    "degree_bound",
    "flops_report",
    "gradcheck",
    "param_count",
    "shard",
    "split",
    "synth_generate",
    "teacher_auc",
    "train_run",
]
