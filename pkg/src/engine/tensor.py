"""Dense float64 tensors with reverse-mode differentiation.

A forward pass records each primitive as a :class:`Function` node attached to its
output tensor. :func:`backward` walks that record once, from a scalar root back to
the leaves, in reverse topological order.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import ShapeError, TapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed forward computation without recording a tape (this thread only)"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Function:
    """Base class for differentiable primitives.

    Subclasses implement ``forward`` on raw arrays and ``backward``, which maps the
    gradient of the output to one gradient (or None) per input tensor.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(t) for t in inputs)
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)

    def needs_grad(self, index: int) -> bool:
        return self.tensors[index].requires_grad

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so that ``grad`` matches ``to_shape``"""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(to_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad.reshape(to_shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode differentiation"""

    __array_priority__ = 100

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence[Any]],
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.grad: Optional[np.ndarray] = None
        self.name = name

    # -- properties -------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # -- operators (implemented in functional) ----------------------------
    def __add__(self, other):
        from src.engine import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from src.engine import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from src.engine import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from src.engine import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from src.engine import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from src.engine import functional as F
        return F.mul(other, self)

    def __truediv__(self, other):
        from src.engine import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from src.engine import functional as F
        return F.div(other, self)

    def __neg__(self):
        from src.engine import functional as F
        return F.neg(self)

    def __pow__(self, exponent: float):
        from src.engine import functional as F
        return F.power(self, exponent)

    def __matmul__(self, other):
        from src.engine import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from src.engine import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.engine import functional as F
        return F.reduce("sum", self, axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.engine import functional as F
        return F.reduce("mean", self, axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.engine import functional as F
        return F.reduce("max", self, axis, keepdims=keepdims)

    def min(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.engine import functional as F
        return F.reduce("min", self, axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from src.engine import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from src.engine import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    def abs(self) -> "Tensor":
        from src.engine import functional as F
        return F.absolute(self)

    def exp(self) -> "Tensor":
        from src.engine import functional as F
        return F.exp(self)

    def log(self) -> "Tensor":
        from src.engine import functional as F
        return F.log(self)


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(data: Union[np.ndarray, float, Sequence[Any]], name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf tensor that owns a private copy of ``data``"""
    return Tensor(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)


class ComputationTape:
    """The recorded forward pass reachable from one root tensor.

    ``nodes`` lists every tensor in topological order: each node appears after all
    of its inputs.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = self._topological_order(root)

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in reversed(node.creator.tensors):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    @property
    def functions(self) -> List[Function]:
        return [node.creator for node in self.nodes if node.creator is not None]

    def backward(self) -> None:
        root = self.root
        if root.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        if not root.requires_grad:
            raise TapeError("backward called on a tensor that does not require grad")
        for func in self.functions:
            if func.consumed:
                raise TapeError("this tape was already used for a backward pass; re-run the forward pass")

        grads = {id(root): np.ones(root.shape, dtype=DTYPE)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            node.accumulate_grad(grad)
            func = node.creator
            if func is None:
                continue
            input_grads = func.backward(grad)
            func.consumed = True
            for parent, parent_grad in zip(func.tensors, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = np.asarray(parent_grad, dtype=DTYPE)
                if parent_grad.shape != parent.shape:
                    raise ShapeError(
                        f"{type(func).__name__} produced gradient of shape {parent_grad.shape} "
                        f"for input of shape {parent.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from the scalar ``root``"""
    ComputationTape(root).backward()
