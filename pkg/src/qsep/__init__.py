"""qsep: a structurally separable autoencoder for 3-qubit density matrices.

The decoder can only emit normalized sums of product states, so a model
trained purely on separable states reconstructs them well and fails loudly on
correlated ones. Reconstruction loss above a threshold flags quantum
correlation (discord, and a fortiori entanglement).
"""
from .errors import DataFormatError, TrainingDivergedError
from .oracles import StateClass, StateLabel, classify, negativity, zero_discord_check
from .separator import (
    SeparatorConfig,
    SeparatorParams,
    baseline_losses,
    forward,
    forward_batch,
    gradient,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import Dataset, TrainConfig, TrainReport, load_qsd, save_qsd, train

__version__ = "0.1.0"

__all__ = [
    "DataFormatError",
    "TrainingDivergedError",
    "StateClass",
    "StateLabel",
    "classify",
    "negativity",
    "zero_discord_check",
    "SeparatorConfig",
    "SeparatorParams",
    "baseline_losses",
    "forward",
    "forward_batch",
    "gradient",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "Dataset",
    "TrainConfig",
    "TrainReport",
    "load_qsd",
    "save_qsd",
    "train",
    "__version__",
]
