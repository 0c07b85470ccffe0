"""Partial-label learning with a guided prototypical classifier, at desk scale."""
from .core import TrainConfig, TrainResult, train, train_supervised
from .pll_data import PLLDataset, load_dataset, make_blobs, save_dataset, uniform_candidates

__all__ = [
    "PLLDataset", "TrainConfig", "TrainResult", "load_dataset", "make_blobs",
    "save_dataset", "train", "train_supervised", "uniform_candidates",
]
__version__ = "0.1.0"
