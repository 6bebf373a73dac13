from vjepa_fer.autodiff.tensor import (
    Node, Tape, Tensor, add, as_tensor, backward, bmm, concat_rows, cross_entropy, default_dtype,
    elementwise, expand_rows, gelu, get_default_dtype, is_grad_enabled, l1_loss, layer_norm, linear,
    matmul, mean_rows, mul, no_grad, permute, reshape, scale, softmax, sub, sum_all, take_rows,
)
from vjepa_fer.autodiff.optim import AdamW, OptimizerState, optimizer_step
from vjepa_fer.autodiff.nn import LayerNorm, Linear, Module
from vjepa_fer.autodiff.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamW", "LayerNorm", "Linear", "Module", "Node", "OptimizerState", "Tape", "Tensor", "add",
    "as_tensor", "backward", "bmm", "concat_rows", "cross_entropy", "default_dtype", "elementwise",
    "expand_rows", "gelu", "get_default_dtype", "is_grad_enabled", "l1_loss", "layer_norm", "linear",
    "load_checkpoint", "matmul", "mean_rows", "mul", "no_grad", "optimizer_step", "permute", "reshape",
    "save_checkpoint", "scale", "softmax", "sub", "sum_all", "take_rows",
]
