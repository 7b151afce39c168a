from .tensor import Tensor, no_grad, is_grad_enabled
from . import functional
from .layers import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    sinusoidal_encoding,
)
from .optim import SGD, AdamW, clip_grad_norm

__all__ = [
    "Tensor", "no_grad", "is_grad_enabled", "functional",
    "Embedding", "FeedForward", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "sinusoidal_encoding",
    "SGD", "AdamW", "clip_grad_norm",
]
