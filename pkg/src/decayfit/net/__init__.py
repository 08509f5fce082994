from .infer import infer, infer_batch
from .io import load_weights, save_weights
from .losses import batch_loss, edf_loss, noise_loss, order_loss, total_loss
from .model import (
    DecayFitNet,
    NetworkOutput,
    NetworkParameters,
    NetworkTopology,
    init_parameters,
    network_backward,
    network_forward,
    postprocess_outputs,
)
from .train import TrainingConfig, cosine_learning_rate, train

__all__ = [
    "DecayFitNet", "NetworkOutput", "NetworkParameters", "NetworkTopology", "TrainingConfig",
    "batch_loss", "cosine_learning_rate", "edf_loss", "infer", "infer_batch", "init_parameters",
    "load_weights", "network_backward", "network_forward", "noise_loss", "order_loss",
    "postprocess_outputs", "save_weights", "total_loss", "train",
]
