"""Graph classification with attention-based causal/trivial decomposition.

The package bundles a float64 reverse-mode autodiff core, mask-aware GCN/GIN
layers, the causal-attention model with its disentanglement and intervention
losses, a biased synthetic motif benchmark, a TUDataset loader, and an
experiment harness with a CLI.
"""

from .autodiff import Tape, Tensor, backward
from .data import Dataset, Graph, compute_bias, load_dataset, load_tudataset, save_dataset
from .model import CalModel, predict
from .synthetic import SynSpec, make_synthetic
from .train import TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward",
    "Dataset", "Graph", "compute_bias", "load_dataset", "load_tudataset",
    "save_dataset", "CalModel", "predict", "SynSpec", "make_synthetic",
    "TrainConfig", "evaluate", "fit", "__version__",
]
