"""Minimal differentiable-network substrate."""

from contextmeta.nn.checkpoint import load_params, params_digest, save_params
from contextmeta.nn.gradcheck import finite_difference_grad
from contextmeta.nn.layers import Conv2d, Dense, Flatten, Layer, ReLU
from contextmeta.nn.losses import CROSS_ENTROPY, MSE_LOSS, CrossEntropy, Loss, MSE, get_loss, softmax
from contextmeta.nn.network import Network, backward, default_backbone, forward, mlp
from contextmeta.nn.optim import SGD, Adam, Optimizer, make_optimizer, optimizer_step
from contextmeta.nn.params import Layout, LayoutEntry, ParameterVector

__all__ = [
    "Adam", "CROSS_ENTROPY", "Conv2d", "CrossEntropy", "Dense", "Flatten", "Layer", "Layout",
    "LayoutEntry", "Loss", "MSE", "MSE_LOSS", "Network", "Optimizer", "ParameterVector", "ReLU",
    "SGD", "backward", "default_backbone", "finite_difference_grad", "forward", "get_loss",
    "load_params", "make_optimizer", "mlp", "optimizer_step", "params_digest", "save_params", "softmax",
]
