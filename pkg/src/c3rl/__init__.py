"""Siamese channel-view contrastive training for forecasters on a small numpy autodiff core."""

from .data import RawSeries, SplitSpec, WindowedDataset, load_csv, make_dataset, mae, mse, synthetic_sine
from .errors import (
    AxisError,
    C3RLError,
    CapabilityError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    RankError,
)
from .framework import HeadConfig, LossWeights, SiameseBundle, build_siamese, forward_infer, forward_train
from .lambdas import default_lambdas, lookup_lambdas
from .models import ModelConfig, build_model
from .runner import ExperimentConfig, RunResult, emit_results, parse_config, run_experiment, run_paired
from .tensor import Tensor, backward, detach, no_grad

__version__ = "0.1.0"

__all__ = [
    "AxisError", "C3RLError", "CapabilityError", "ConfigError", "ContractError", "DataError",
    "DimensionError", "NumericError", "RankError",
    "Tensor", "backward", "detach", "no_grad",
    "ModelConfig", "build_model",
    "HeadConfig", "LossWeights", "SiameseBundle", "build_siamese", "forward_train", "forward_infer",
    "default_lambdas", "lookup_lambdas",
    "RawSeries", "SplitSpec", "WindowedDataset", "load_csv", "make_dataset", "mse", "mae", "synthetic_sine",
    "ExperimentConfig", "RunResult", "parse_config", "run_experiment", "run_paired", "emit_results",
]
