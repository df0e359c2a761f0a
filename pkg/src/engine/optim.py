import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.engine.tensor import DTYPE, Tensor
from src.utils.errors import TapeError

logger = logging.getLogger(__name__)


class AdamState(BaseModel):
    """Per-parameter first/second moment estimates and the shared step count"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[int, np.ndarray] = Field(default_factory=dict)
    v: Dict[int, np.ndarray] = Field(default_factory=dict)


def sgd_adam_step(params: Sequence[Tensor], state: AdamState, learning_rate: float) -> None:
    """Apply one Adam update in place and clear the gradients.

    Moments are keyed by position in ``params``, so the list order must stay fixed
    for the lifetime of ``state``.
    """
    for index, param in enumerate(params):
        if param.grad is None:
            name = param.name or f"#{index}"
            raise TapeError(f"parameter {name} has no gradient; run backward before stepping")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for index, param in enumerate(params):
        grad = param.grad
        m = state.m.get(index)
        v = state.v.get(index)
        if m is None:
            m = np.zeros(param.shape, dtype=DTYPE)
            v = np.zeros(param.shape, dtype=DTYPE)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[index] = m
        state.v[index] = v
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = param.data - learning_rate * update
        param.grad = None


class Adam:
    """Adam over a fixed list of parameters"""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: List[Tensor] = list(params)
        self.learning_rate = learning_rate
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        sgd_adam_step(self.params, self.state, self.learning_rate)

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None

    def fill_missing_grads(self, params: Optional[Sequence[Tensor]] = None) -> None:
        """Give parameters that took no part in the last forward pass a zero gradient"""
        for param in params if params is not None else self.params:
            if param.grad is None:
                param.grad = np.zeros(param.shape, dtype=DTYPE)
