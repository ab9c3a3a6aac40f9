"""Neighborhood homophily metrics and NH-guided graph convolutional networks."""

from .data_io import Dataset, SynthSpec, generate, load_dataset, save_dataset
from .graph import Graph, KHopIndex, NormAdj, apply_mask, build_graph, khop_index, normalize_adjacency
from .metrics import (
    BinTable,
    MaskPair,
    NhVector,
    bin_accuracy,
    make_masks,
    masking_accuracy,
    nh_update,
    nh_values,
    node_homophily,
    normalize_metric,
)
from .model import ModelConfig, Prediction, forward, init_params, loss
from .training import RunResult, Split, TrainConfig, make_split, multi_seed, train_run

__version__ = "0.1.0"

__all__ = [
    "BinTable", "Dataset", "Graph", "KHopIndex", "MaskPair", "ModelConfig", "NhVector", "NormAdj",
    "Prediction", "RunResult", "Split", "TrainConfig", "apply_mask", "bin_accuracy",
    "SynthSpec", "build_graph", "forward", "generate", "init_params", "khop_index", "load_dataset", "loss", "make_masks", "make_split",
    "masking_accuracy", "multi_seed", "nh_update", "nh_values", "node_homophily",
    "normalize_adjacency", "normalize_metric", "save_dataset", "train_run",
]
