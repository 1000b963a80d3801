from .kernels import BACKEND
from .layers import (
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool, ReLU, ShapeError,
    conv2d_forward, dense_forward, dropout_forward, maxpool_forward,
)
from .model import (
    AdamState, ForwardCache, Model, ScalingParams, StaleCacheError, adam_step,
    default_architecture, he_uniform_init, model_adam_step, mse_loss,
)
from .serialize import FORMAT, ModelFormatError, deserialize_model, serialize_model

__all__ = [
    "BACKEND", "BatchNorm", "Conv2d", "Dense", "Dropout", "Flatten", "Layer", "MaxPool",
    "ReLU", "ShapeError", "conv2d_forward", "dense_forward", "dropout_forward",
    "maxpool_forward", "AdamState", "ForwardCache", "Model", "ScalingParams",
    "StaleCacheError", "adam_step", "default_architecture", "he_uniform_init",
    "model_adam_step", "mse_loss", "FORMAT", "ModelFormatError", "deserialize_model",
    "serialize_model",
]
