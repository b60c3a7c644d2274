"""Friend suggestion via similarity-evolution ranking.

A self-contained implementation of a per-timestep user embedding, multi-view
bilinear similarity, recurrent similarity-evolution summarization, and a
binary ranking head, together with synthetic data generation, training,
retrieval, and ranking evaluation.
"""

from .autograd import Tensor, grad_check, no_grad
from .model import ModelConfig, PairBatch, bce_loss, dsen_forward
from .training import TrainConfig, train

__all__ = [
    "Tensor", "grad_check", "no_grad",
    "ModelConfig", "PairBatch", "bce_loss", "dsen_forward",
    "TrainConfig", "train",
]
