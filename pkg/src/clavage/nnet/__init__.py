from .autodiff import Tensor, backward
from .layers import (
    ModelConfig,
    MultiBranchRegressor,
    load_checkpoint,
    save_checkpoint,
)
from .train import (
    AdamState,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    evaluate_mae,
    gradient_check,
    one_cycle_lr,
    train_two_stage,
)

__all__ = [
    "Tensor",
    "backward",
    "ModelConfig",
    "MultiBranchRegressor",
    "load_checkpoint",
    "save_checkpoint",
    "AdamState",
    "TrainConfig",
    "TrainingDivergedError",
    "adam_step",
    "evaluate_mae",
    "gradient_check",
    "one_cycle_lr",
    "train_two_stage",
]
