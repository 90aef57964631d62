"""Minimal deterministic dense-network engine (numpy, float64)."""

from puffprint.nn.layers import Dense, Quantize, ReLU, Sigmoid, SoftmaxT, log_softmax_t, softmax_t
from puffprint.nn.losses import loss_bce, loss_ce, loss_kd, loss_mse
from puffprint.nn.network import Network, NonFiniteError, mlp
from puffprint.nn.train import History, TrainConfig, TrainingDiverged, get_loss, train

__all__ = [
    "Dense", "History", "Network", "NonFiniteError", "Quantize", "ReLU", "Sigmoid", "SoftmaxT",
    "TrainConfig", "TrainingDiverged", "get_loss", "log_softmax_t", "loss_bce", "loss_ce",
    "loss_kd", "loss_mse", "mlp", "softmax_t", "train",
]
