"""Minimal reverse-mode differentiation over dense numpy tensors."""

from evject.autograd import ops
from evject.autograd.gradcheck import gradient_check
from evject.autograd.serialization import dump_weights, load_weights
from evject.autograd.tensor import Graph, Tensor

__all__ = ["Graph", "Tensor", "dump_weights", "gradient_check", "load_weights", "ops"]
