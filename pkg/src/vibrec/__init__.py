"""Rating prediction with Gaussian latent embeddings and Euclidean distance."""

__version__ = "0.1.0"

from .data import Dataset, DatasetError, holdout_split, load, synth_generate  # noqa: E402
from .vibdml import TrainConfig, TrainingError, VibDmlModel, fit  # noqa: E402

__all__ = [
    "Dataset",
    "DatasetError",
    "TrainConfig",
    "TrainingError",
    "VibDmlModel",
    "fit",
    "holdout_split",
    "load",
    "synth_generate",
]
