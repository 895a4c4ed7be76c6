from . import functional
from .checkpoint import CheckpointError
from .layers import (BatchNorm2d, Conv2d, Dropout, Embedding, LayerNorm, Linear, Module,
                     ModuleList, MultiHeadAttention, TransformerLayer)
from .optim import Adam, AdamState, LrSchedule, NumericError, adam_step, lr_at
from .tensor import (GraphError, Parameter, ShapeError, Tensor, default_dtype, get_default_dtype,
                     set_default_dtype)

__all__ = [
    "functional", "CheckpointError", "BatchNorm2d", "Conv2d", "Dropout", "Embedding",
    "LayerNorm", "Linear", "Module", "ModuleList", "MultiHeadAttention", "TransformerLayer",
    "Adam", "AdamState", "LrSchedule", "NumericError", "adam_step", "lr_at", "GraphError",
    "Parameter", "ShapeError", "Tensor", "default_dtype", "get_default_dtype", "set_default_dtype",
]
