"""Central finite-difference oracle for the differentiation engine"""
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.engine.tensor import Tensor, no_grad


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-4,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``tensor.data``.

    ``indices`` restricts the differences to those flat positions; the rest stay 0.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros(tensor.shape)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    with no_grad():
        for i in positions:
            original = flat[i]
            flat[i] = original + step
            plus = fn().item()
            flat[i] = original - step
            minus = fn().item()
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denominator


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
              atol: float = 1e-7, limit: Optional[int] = None) -> List[float]:
    """Compare backward() against central differences for every input.

    Returns the worst relative error per input; entries whose absolute difference is
    below ``atol`` count as exact, which keeps near-zero gradients from dominating.
    With ``limit`` only the first ``limit`` flat entries of each input are checked.
    """
    for tensor in inputs:
        tensor.grad = None
    fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    worst = []
    for tensor, grad in zip(inputs, analytic):
        indices = None if limit is None else range(min(limit, tensor.size))
        numeric = numerical_gradient(fn, tensor, step=step, indices=indices)
        err = relative_error(grad, numeric).reshape(-1)
        err[np.abs(grad - numeric).reshape(-1) < atol] = 0.0
        if indices is not None:
            err = err[:len(indices)]
        worst.append(float(err.max()) if err.size else 0.0)
    return worst
