"""Forecasters with a scikit-learn style interface and their functional building blocks."""
from .base import Forecaster, NeuralForecaster, check_windows
from .baseline import ConstantVelocity, LinearForecaster, TCNNForecaster
from .graph import GNNForecaster
from .lmu import LMUForecaster
from .recurrent import CNNLSTMForecaster, LSTMForecaster
from .transformer import TransformerForecaster

MODELS = {
    "cv": ConstantVelocity,
    "linear": LinearForecaster,
    "tcnn": TCNNForecaster,
    "lstm": LSTMForecaster,
    "cnn_lstm": CNNLSTMForecaster,
    "lmu": LMUForecaster,
    "gnn": GNNForecaster,
    "transformer": TransformerForecaster,
}

CONTEXT_MODELS = ("cnn_lstm", "lmu", "transformer", "gnn")


def make_model(name: str, **params) -> Forecaster:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)


__all__ = [
    "CONTEXT_MODELS", "MODELS", "CNNLSTMForecaster", "ConstantVelocity", "Forecaster", "GNNForecaster",
    "LMUForecaster", "LSTMForecaster", "LinearForecaster", "NeuralForecaster", "TCNNForecaster",
    "TransformerForecaster", "check_windows", "make_model",
]
