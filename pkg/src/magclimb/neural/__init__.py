"""From-scratch differentiable layers, Adam, and gradient verification."""

from .layers import (
    AdaptiveReLU,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    LSTM,
    LstmState,
    MaxPool1D,
    ReLU,
    RNN,
    Softmax,
    cross_entropy,
    lstm_step,
    softmax,
    softmax_cross_entropy_grad,
)
from .graph import ModelGraph
from .optim import Adam, AdamState, adam_step
from .gradcheck import gradient_check

__all__ = [
    "AdaptiveReLU", "Conv1D", "Dense", "Dropout", "Flatten", "LSTM",
    "LstmState", "MaxPool1D", "ReLU", "RNN", "Softmax", "cross_entropy",
    "lstm_step", "softmax", "softmax_cross_entropy_grad", "ModelGraph",
    "Adam", "AdamState", "adam_step", "gradient_check",
]
