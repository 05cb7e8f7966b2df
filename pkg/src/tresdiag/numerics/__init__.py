from .graph import Graph, Node, Tensor, as_tensor, backward
from .gradcheck import finite_diff_gradient, relative_error
from .ops import (add, conv2d, dense, dropout, log_softmax, maxpool2d, mean, mul, relu,
                  reshape, softmax, square, sub, sum, take)
from .rng import Rng

__all__ = [
    "Graph", "Node", "Tensor", "as_tensor", "backward",
    "finite_diff_gradient", "relative_error",
    "add", "conv2d", "dense", "dropout", "log_softmax", "maxpool2d", "mean", "mul",
    "relu", "reshape", "softmax", "square", "sub", "sum", "take",
    "Rng",
]
