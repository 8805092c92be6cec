"""Minimal differentiable compute substrate: tensors, layers, SGD, verification."""

from . import tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    BatchNorm1d,
    Conv1d,
    Dropout,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    RngBox,
    TransformerDecoder,
    TransformerEncoder,
    add_positional_encoding,
    causal_bias,
    key_padding_bias,
    max_pool_time,
    mean_pool_time,
    sinusoidal_positions,
)
from .optim import SGD, cosine_lr, global_grad_norm
from .tensor import NEG_INF, Tensor, astensor, l2_normalize, no_grad

__all__ = [
    "tensor", "Tensor", "astensor", "no_grad", "NEG_INF", "l2_normalize",
    "Parameter", "Module", "RngBox", "Linear", "Embedding", "Conv1d",
    "BatchNorm1d", "LayerNorm", "Dropout", "MultiHeadAttention",
    "FeedForward", "TransformerEncoder", "TransformerDecoder",
    "sinusoidal_positions", "add_positional_encoding", "key_padding_bias",
    "causal_bias", "mean_pool_time", "max_pool_time",
    "SGD", "cosine_lr", "global_grad_norm",
    "grad_check", "Checkpoint", "save_checkpoint", "load_checkpoint",
]
