"""Minimal reverse-mode autodiff engine with the layers the surrogate models need."""

from stresslab.autodiff import ops
from stresslab.autodiff.gradcheck import GradCheckReport, check_module, grad_check
from stresslab.autodiff.layers import BatchNorm, Conv2D, ConvTranspose2D, Dense, Module, SEBlock, SEResBlock
from stresslab.autodiff.optim import Adam, ExponentialDecay
from stresslab.autodiff.tensor import Parameter, Tensor, set_check_finite, tape

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "ExponentialDecay",
    "GradCheckReport",
    "Module",
    "Parameter",
    "SEBlock",
    "SEResBlock",
    "Tensor",
    "check_module",
    "grad_check",
    "ops",
    "set_check_finite",
    "tape",
]
