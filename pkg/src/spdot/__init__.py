"""Optimal-transport domain adaptation on SPD matrices under the Log-Euclidean metric."""

from .data import SpdDataset, load_dataset, make_banded_dataset, make_synthetic_pair, save_dataset
from .emd import solve_emd
from .errors import (
    ConvergenceError,
    DatasetFormatError,
    DimensionError,
    InfeasibleError,
    NumericalError,
    SpdDomainError,
    SpdotError,
)
from .spd import frechet_mean, lem_distance, spd_exp, spd_log
from .spdnet import DotModel, init_model, load_model, save_model
from .losses import LossWeights
from .training import TrainConfig, train
from .transport import transport_lem

__version__ = "0.1.0"
