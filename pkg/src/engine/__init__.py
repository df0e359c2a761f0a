# Differentiation engine
from src.engine.tensor import ComputationTape, Tensor, as_tensor, backward, no_grad, parameter

__all__ = ["ComputationTape", "Tensor", "as_tensor", "backward", "no_grad", "parameter"]
