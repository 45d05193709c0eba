"""Two-tower metric learning for implicit-feedback recommendation."""
from .kernels import BACKEND
from .mlp import Activation, MlpParams, mlp_backward, mlp_forward
from .metric import euclidean_distance, triplet_loss, triplet_loss_grads
from .trainer import Model, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Activation",
    "MlpParams",
    "Model",
    "TrainConfig",
    "euclidean_distance",
    "load_checkpoint",
    "mlp_backward",
    "mlp_forward",
    "save_checkpoint",
    "train",
    "triplet_loss",
    "triplet_loss_grads",
]
