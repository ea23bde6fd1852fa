"""Small sequential network stack in numpy."""

from .layers import Conv1D, Conv2D, Dense, Dropout, Flatten, MaxPool1D, MaxPool2D, ReLU, ShapeError
from .network import (Network, Prediction, TrainConfig, TrainHistory, accuracy, backward,
                      extract_features, forward, gradient_check, predict, predict_batch,
                      sgd_step, train)

__all__ = [
    "Conv1D", "Conv2D", "Dense", "Dropout", "Flatten", "MaxPool1D", "MaxPool2D", "ReLU",
    "ShapeError", "Network", "Prediction", "TrainConfig", "TrainHistory", "accuracy",
    "backward", "extract_features", "forward", "gradient_check", "predict", "predict_batch",
    "sgd_step", "train",
]
