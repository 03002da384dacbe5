"""Small reverse-mode autodiff engine with dense layers and Adam."""

from .autograd import Tensor, no_grad, parameter, tensor
from .cplx import CTensor
from .gradcheck import grad_check
from .layers import MLP, Dense, Module
from .optim import Adam, AdamState, PlateauHalving, adam_step

__all__ = ["Tensor", "no_grad", "parameter", "tensor", "CTensor", "grad_check", "MLP", "Dense",
           "Module", "Adam", "AdamState", "PlateauHalving", "adam_step"]
