"""Abstractive opinion tagging: ranked tag generation from item reviews."""

from .config import ModelConfig, TrainConfig, desk_model_config, desk_train_config
from .corpus import Item, Review, Vocabulary, load_dataset, save_dataset
from .model import AOTNet

__all__ = [
    "AOTNet", "Item", "ModelConfig", "Review", "TrainConfig", "Vocabulary",
    "desk_model_config", "desk_train_config", "load_dataset", "save_dataset",
]
__version__ = "0.1.0"
