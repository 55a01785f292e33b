"""Dual-intent graph modeling for recommending groups to users."""

from .dataset import InteractionDataset, SplitAssignment, load_dataset, split_dataset
from .evaluation import RankingMetrics, evaluate
from .model import DiRec, ModelConfig
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "DiRec",
    "InteractionDataset",
    "ModelConfig",
    "RankingMetrics",
    "SplitAssignment",
    "TrainConfig",
    "evaluate",
    "fit",
    "load_dataset",
    "split_dataset",
]
