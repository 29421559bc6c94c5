"""Gated-rank adapters with a synthetic corruption benchmark."""

from .adapter import (
    GaraAdapter,
    GateDecision,
    GatingNetworks,
    RankSpace,
    SingleSpaceAdapter,
    adapter_forward,
    compose_delta,
    delta_tokens,
    gate_components,
    gate_space,
    param_count,
    pin_gates,
)
from .autograd import Node, Parameter, backward
from .baselines import LoraAdapter, MoeLoraAdapter, lora_forward, moe_forward
from .bench import BenchSample, CorruptionSpec, apply_corruption, dice, iou
from .config import ExperimentConfig
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    GaraError,
    ShapeError,
    TrainingDiagnosticError,
    UsageError,
)
from .rng import SeededRng
from .toy import SegmentationModel, ToyBackbone, forward_segment, pretrain_backbone
from .trainer import Adam, TrainConfig, evaluate, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BenchSample",
    "CheckpointError",
    "ConfigError",
    "CorruptionSpec",
    "DataError",
    "DivergenceError",
    "ExperimentConfig",
    "GaraAdapter",
    "GaraError",
    "GateDecision",
    "GatingNetworks",
    "LoraAdapter",
    "MoeLoraAdapter",
    "Node",
    "Parameter",
    "RankSpace",
    "SegmentationModel",
    "SeededRng",
    "ShapeError",
    "SingleSpaceAdapter",
    "ToyBackbone",
    "TrainConfig",
    "TrainingDiagnosticError",
    "UsageError",
    "adapter_forward",
    "apply_corruption",
    "backward",
    "compose_delta",
    "delta_tokens",
    "dice",
    "evaluate",
    "fit",
    "forward_segment",
    "gate_components",
    "gate_space",
    "iou",
    "lora_forward",
    "moe_forward",
    "param_count",
    "pin_gates",
    "pretrain_backbone",
    "train_step",
]
