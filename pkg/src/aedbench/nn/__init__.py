"""Minimal reverse-mode neural network core (float64, deterministic)."""

from .layers import (
    LAYER_KINDS,
    AddChannelDim,
    BiGRU,
    Conv2D,
    ConvToPatchSequence,
    ConvToTimeSequence,
    GlobalMeanPool,
    GradientStore,
    GRUCell,
    Layer,
    LayerNorm,
    Linear,
    MaxPool2D,
    MultiHeadSelfAttention,
    Parameter,
    ReLU,
    ResidualConvBlock,
    Sigmoid,
    SinusoidalPositionalEncoding,
    TransformerEncoderLayer,
    build_layer,
    sigmoid,
)
from .model import CheckpointError, Model, grad_check, load_model, save_model
from .optim import Adam, TrainConfig, train

__all__ = [
    "LAYER_KINDS",
    "AddChannelDim",
    "BiGRU",
    "Conv2D",
    "ConvToPatchSequence",
    "ConvToTimeSequence",
    "GlobalMeanPool",
    "GradientStore",
    "GRUCell",
    "Layer",
    "LayerNorm",
    "Linear",
    "MaxPool2D",
    "MultiHeadSelfAttention",
    "Parameter",
    "ReLU",
    "ResidualConvBlock",
    "Sigmoid",
    "SinusoidalPositionalEncoding",
    "TransformerEncoderLayer",
    "build_layer",
    "sigmoid",
    "CheckpointError",
    "Model",
    "grad_check",
    "load_model",
    "save_model",
    "Adam",
    "TrainConfig",
    "train",
]
