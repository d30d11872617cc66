"""Desk-scale generative visual dialogue with adaptive reasoning and weighted-likelihood training."""

from . import tensor
from .tensor import Tensor, backward, no_grad
from .gradcheck import grad_check
from .optim import AdamState, adam_step

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "grad_check",
    "AdamState",
    "adam_step",
    "tensor",
]
