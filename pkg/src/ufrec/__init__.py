"""Sequential recommendation with uniformity/frequency-aware enhancement."""

from .config import TrainConfig
from .data import SplitDataset, build_sequences, load_interactions, split_leave_one_out
from .evaluator import MetricReport, evaluate, rank_metrics
from .model import UFRecModel
from .partition import Partition, compute_partition
from .trainer import train

__all__ = [
    "MetricReport", "Partition", "SplitDataset", "TrainConfig", "UFRecModel", "build_sequences",
    "compute_partition", "evaluate", "load_interactions", "rank_metrics", "split_leave_one_out", "train",
]
__version__ = "0.1.0"
