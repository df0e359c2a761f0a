"""Differentiable primitives.

Binary elementwise operations broadcast over trailing dimensions; their gradients
are summed back to each input's shape.
"""
import logging
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.engine.tensor import DTYPE, Function, Tensor, as_tensor
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

EPS = 1e-8

Axes = Optional[Union[int, Sequence[int]]]


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _safe_denominator(y: np.ndarray) -> np.ndarray:
    """Replace magnitudes below EPS by +/-EPS, keeping the sign (zero maps to +EPS)"""
    small = np.abs(y) < EPS
    if not small.any():
        return y
    return np.where(small, np.where(y < 0, -EPS, EPS), y)


# -- binary elementwise --------------------------------------------------------

class Add(Function):
    def forward(self, x, y):
        _broadcast_shape(x, y)
        return x + y

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(grad, x.shape) if x.requires_grad else None,
            self.unbroadcast(grad, y.shape) if y.requires_grad else None,
        )


class Sub(Function):
    def forward(self, x, y):
        _broadcast_shape(x, y)
        return x - y

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(grad, x.shape) if x.requires_grad else None,
            self.unbroadcast(-grad, y.shape) if y.requires_grad else None,
        )


class Mul(Function):
    def forward(self, x, y):
        _broadcast_shape(x, y)
        return x * y

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(grad * y.data, x.shape) if x.requires_grad else None,
            self.unbroadcast(grad * x.data, y.shape) if y.requires_grad else None,
        )


class Div(Function):
    def forward(self, x, y):
        _broadcast_shape(x, y)
        # clamped, not smoothed: |y| >= EPS divides exactly, no EPS is added
        self.denominator = _safe_denominator(y)
        return x / self.denominator

    def backward(self, grad):
        x, y = self.tensors
        d = self.denominator
        grad_x = self.unbroadcast(grad / d, x.shape) if x.requires_grad else None
        grad_y = None
        if y.requires_grad:
            active = (np.abs(y.data) >= EPS).astype(DTYPE)
            grad_y = self.unbroadcast(-grad * x.data / (d * d) * active, y.shape)
        return grad_x, grad_y


class Minimum(Function):
    """Elementwise minimum; ties route the gradient to the first argument"""

    def forward(self, x, y):
        _broadcast_shape(x, y)
        self.pick_x = x <= y
        return np.where(self.pick_x, x, y)

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(np.where(self.pick_x, grad, 0.0), x.shape) if x.requires_grad else None,
            self.unbroadcast(np.where(self.pick_x, 0.0, grad), y.shape) if y.requires_grad else None,
        )


class Maximum(Function):
    """Elementwise maximum; ties route the gradient to the first argument"""

    def forward(self, x, y):
        _broadcast_shape(x, y)
        self.pick_x = x >= y
        return np.where(self.pick_x, x, y)

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(np.where(self.pick_x, grad, 0.0), x.shape) if x.requires_grad else None,
            self.unbroadcast(np.where(self.pick_x, 0.0, grad), y.shape) if y.requires_grad else None,
        )


class Where(Function):
    """Select from ``x`` where the constant ``condition`` holds, else from ``y``"""

    def forward(self, x, y, condition=None):
        self.condition = np.asarray(condition, dtype=bool)
        return np.where(self.condition, x, y)

    def backward(self, grad):
        x, y = self.tensors
        return (
            self.unbroadcast(np.where(self.condition, grad, 0.0), x.shape) if x.requires_grad else None,
            self.unbroadcast(np.where(self.condition, 0.0, grad), y.shape) if y.requires_grad else None,
        )


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"cannot matmul shapes {x.shape} and {y.shape}")
        return np.matmul(x, y)

    def backward(self, grad):
        x, y = self.tensors
        grad_x = grad_y = None
        if x.requires_grad:
            grad_x = self.unbroadcast(np.matmul(grad, np.swapaxes(y.data, -1, -2)), x.shape)
        if y.requires_grad:
            grad_y = self.unbroadcast(np.matmul(np.swapaxes(x.data, -1, -2), grad), y.shape)
        return grad_x, grad_y


# -- unary elementwise ---------------------------------------------------------

class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    def forward(self, x, exponent=2.0):
        self.exponent = float(exponent)
        return np.power(x, self.exponent)

    def backward(self, grad):
        x = self.tensors[0].data
        return (grad * self.exponent * np.power(x, self.exponent - 1.0),)


class Abs(Function):
    def forward(self, x):
        return np.abs(x)

    def backward(self, grad):
        return (grad * np.sign(self.tensors[0].data),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    """Natural log with the argument clamped to at least EPS"""

    def forward(self, x):
        # clamp only; arguments >= EPS are logged exactly
        self.safe = np.maximum(x, EPS)
        return np.log(self.safe)

    def backward(self, grad):
        x = self.tensors[0].data
        return (grad / self.safe * (x >= EPS),)


class Sqrt(Function):
    def forward(self, x):
        self.out = np.sqrt(np.maximum(x, 0.0))
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / np.maximum(self.out, EPS),)


class Sin(Function):
    def forward(self, x):
        return np.sin(x)

    def backward(self, grad):
        return (grad * np.cos(self.tensors[0].data),)


class Cos(Function):
    def forward(self, x):
        return np.cos(x)

    def backward(self, grad):
        return (-grad * np.sin(self.tensors[0].data),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Relu(Function):
    def forward(self, x):
        self.active = x > 0
        return np.where(self.active, x, 0.0)

    def backward(self, grad):
        return (grad * self.active,)


class Clamp(Function):
    """Clamp to [low, high]; the gradient passes only where the input lies inside"""

    def forward(self, x, low=None, high=None):
        self.inside = np.ones(x.shape, dtype=bool)
        if low is not None:
            self.inside &= x >= low
        if high is not None:
            self.inside &= x <= high
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


# -- reductions ------------------------------------------------------------------

def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} is out of range for a tensor with {ndim} dimensions")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def _expand_reduced(grad: np.ndarray, axes: Tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        for axis in axes:
            grad = np.expand_dims(grad, axis)
    return grad


class Sum(Function):
    def forward(self, x, axes=None, keepdims=False):
        self.axes = _normalize_axes(axes, x.ndim)
        self.keepdims = keepdims
        return np.sum(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        x = self.tensors[0]
        grad = _expand_reduced(grad, self.axes, self.keepdims)
        return (np.broadcast_to(grad, x.shape).copy(),)


class Mean(Function):
    def forward(self, x, axes=None, keepdims=False):
        self.axes = _normalize_axes(axes, x.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return np.mean(x, axis=self.axes, keepdims=keepdims) if self.axes else x.copy()

    def backward(self, grad):
        x = self.tensors[0]
        grad = _expand_reduced(grad, self.axes, self.keepdims)
        return (np.broadcast_to(grad / self.count, x.shape).copy(),)


class Extremum(Function):
    """Max or min over axes; the gradient goes to the first extremal element"""

    def forward(self, x, axes=None, keepdims=False, largest=True):
        self.axes = _normalize_axes(axes, x.ndim)
        self.keepdims = keepdims
        kept = [a for a in range(x.ndim) if a not in self.axes]
        moved = np.transpose(x, kept + list(self.axes))
        flat = moved.reshape(moved.shape[:len(kept)] + (-1,))
        pick = np.argmax(flat, axis=-1) if largest else np.argmin(flat, axis=-1)
        self.kept = kept
        self.moved_shape = moved.shape
        self.pick = pick
        out = np.take_along_axis(flat, pick[..., None], axis=-1)[..., 0]
        if keepdims:
            out = out.reshape([1 if a in self.axes else x.shape[a] for a in range(x.ndim)])
        return out

    def backward(self, grad):
        x = self.tensors[0]
        grad_kept = grad.reshape(self.pick.shape)
        flat = np.zeros(self.pick.shape + (int(np.prod(self.moved_shape[len(self.kept):], dtype=int)),))
        np.put_along_axis(flat, self.pick[..., None], grad_kept[..., None], axis=-1)
        moved = flat.reshape(self.moved_shape)
        inverse = np.argsort(self.kept + list(self.axes))
        return (np.transpose(moved, inverse).reshape(x.shape),)


# -- shape manipulation ------------------------------------------------------------

class Reshape(Function):
    def forward(self, x, shape=None):
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None

    def backward(self, grad):
        return (grad.reshape(self.tensors[0].shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def _has_array_index(index: Any) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(item, (np.ndarray, list)) for item in items)


class GetItem(Function):
    """Indexing (basic or integer-array); repeated indices accumulate in backward"""

    def forward(self, x, index=None):
        self.index = index
        return np.array(x[index], dtype=DTYPE, copy=True)

    def backward(self, grad):
        x = self.tensors[0]
        out = np.zeros(x.shape, dtype=DTYPE)
        if _has_array_index(self.index):
            np.add.at(out, self.index, grad)
        else:
            out[self.index] += grad
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise ShapeError(f"cannot concatenate shapes {[a.shape for a in arrays]} on axis {axis}") from None

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        try:
            return np.stack(arrays, axis=axis)
        except ValueError:
            raise ShapeError(f"cannot stack shapes {[a.shape for a in arrays]}") from None

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(len(self.tensors)))


class ConstantPad(Function):
    def forward(self, x, pad_width=None, value=0.0):
        self.pad_width = pad_width
        return np.pad(x, pad_width, mode="constant", constant_values=value)

    def backward(self, grad):
        slices = tuple(slice(before, grad.shape[i] - after) for i, (before, after) in enumerate(self.pad_width))
        return (grad[slices].copy(),)


# -- public API --------------------------------------------------------------

def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def power(a, exponent: float) -> Tensor:
    return Power.apply(a, exponent=exponent)


def absolute(a) -> Tensor:
    return Abs.apply(a)


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def sin(a) -> Tensor:
    return Sin.apply(a)


def cos(a) -> Tensor:
    return Cos.apply(a)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def relu(a) -> Tensor:
    return Relu.apply(a)


def minimum(a, b) -> Tensor:
    return Minimum.apply(a, b)


def maximum(a, b) -> Tensor:
    return Maximum.apply(a, b)


def clamp(a, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    return Clamp.apply(a, low=low, high=high)


def where(condition: np.ndarray, a, b) -> Tensor:
    return Where.apply(a, b, condition=condition)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def reshape(a, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=axes)


def getitem(a, index: Any) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def pad2d(a, pad: int, mode: str = "constant") -> Tensor:
    """Pad the last two axes by ``pad`` on each side.

    ``reflect`` and ``edge`` are expressed as index maps, so their gradients fold
    back onto the source pixels.
    """
    a = as_tensor(a)
    if pad == 0:
        return a
    if mode == "constant":
        width = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
        return ConstantPad.apply(a, pad_width=width)
    if mode not in ("reflect", "edge"):
        raise ValueError(f"Unsupported pad mode: {mode}")
    h, w = a.shape[-2:]
    rows = np.pad(np.arange(h), pad, mode=mode)
    cols = np.pad(np.arange(w), pad, mode=mode)
    index = (Ellipsis, rows[:, None], cols[None, :])
    return getitem(a, index)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "min": minimum,
    "max": maximum,
    "abs": absolute,
    "exp": exp,
    "log": log,
}


def elementwise(op_kind: str, a, b=None, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Dispatch an elementwise primitive by name"""
    if op_kind == "clamp":
        return clamp(a, low, high)
    if op_kind not in _ELEMENTWISE:
        raise ValueError(f"Unsupported elementwise op: {op_kind}")
    func = _ELEMENTWISE[op_kind]
    if op_kind in ("abs", "exp", "log"):
        return func(a)
    if b is None:
        raise ValueError(f"{op_kind} needs two operands")
    return func(a, b)


def reduce(op_kind: str, a, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """Dispatch a reduction (sum, mean, min, max) over ``axes`` (all axes when None)"""
    if op_kind == "sum":
        return Sum.apply(a, axes=axes, keepdims=keepdims)
    if op_kind == "mean":
        return Mean.apply(a, axes=axes, keepdims=keepdims)
    if op_kind in ("max", "min"):
        return Extremum.apply(a, axes=axes, keepdims=keepdims, largest=op_kind == "max")
    raise ValueError(f"Unsupported reduction: {op_kind}")
