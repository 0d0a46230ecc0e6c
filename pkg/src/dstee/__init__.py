"""Dynamic sparse training with an exploration-exploitation growth criterion."""

from .errors import ConfigError, ContractError, DSTError, FormatError, NumericalError
from .numerics import Dense, NetworkSpec, OptimizerState, Params
from .policies import DropSchedule, GrowthPolicy
from .sparsity import MaskedTensor, SparsityPlan
from .trainer import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DSTError", "FormatError", "NumericalError",
    "Dense", "NetworkSpec", "OptimizerState", "Params",
    "DropSchedule", "GrowthPolicy", "MaskedTensor", "SparsityPlan",
    "TrainConfig", "TrainState", "train",
]
