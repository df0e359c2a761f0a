"""Convolution and pooling over NCHW tensors"""
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.engine.functional import getitem
from src.engine.tensor import DTYPE, Function, Tensor, as_tensor
from src.utils.errors import ShapeError


def _same_padding(kernel: int) -> Tuple[int, int]:
    total = kernel - 1
    return total // 2, total - total // 2


def _output_extent(size: int, kernel: int, stride: int, pad_total: int) -> int:
    return (size + pad_total - kernel) // stride + 1


def _scatter_windows(grad_windows: np.ndarray, padded_shape: Tuple[int, ...], stride: int) -> np.ndarray:
    """Fold (N, C, Ho, Wo, kh, kw) window gradients back onto the padded input"""
    n, c, ho, wo, kh, kw = grad_windows.shape
    out = np.zeros(padded_shape, dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += grad_windows[:, :, :, :, i, j]
    return out


class Conv2d(Function):
    """Cross-correlation of an (N, C, H, W) input with an (O, C, kh, kw) kernel"""

    def forward(self, x, w, stride=1, padding="same"):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d expects NCHW input and OCkk kernel, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        kh, kw = w.shape[2:]
        if padding == "same":
            pads = (_same_padding(kh), _same_padding(kw))
        elif padding == "valid":
            pads = ((0, 0), (0, 0))
        else:
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.stride = stride
        self.pads = pads
        xp = np.pad(x, ((0, 0), (0, 0)) + pads)
        if xp.shape[2] < kh or xp.shape[3] < kw:
            raise ShapeError(f"input {x.shape} is smaller than kernel {w.shape}")
        ho = _output_extent(x.shape[2], kh, stride, sum(pads[0]))
        wo = _output_extent(x.shape[3], kw, stride, sum(pads[1]))
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        self.windows = windows
        self.padded_shape = xp.shape
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        x, w = self.tensors
        grad_x = grad_w = None
        if w.requires_grad:
            grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
        if x.requires_grad:
            grad_windows = np.tensordot(grad, w.data, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            grad_windows = grad_windows.transpose(0, 3, 1, 2, 4, 5)
            padded = _scatter_windows(grad_windows, self.padded_shape, self.stride)
            (top, _), (left, _) = self.pads
            grad_x = padded[:, :, top:top + x.shape[2], left:left + x.shape[3]].copy()
        return grad_x, grad_w


class AvgPool2d(Function):
    """Mean over k x k windows with the given stride (no padding)"""

    def forward(self, x, kernel=2, stride=2):
        if x.ndim < 2 or x.shape[-2] < kernel or x.shape[-1] < kernel:
            raise ShapeError(f"avg_pool2d: input {x.shape} is smaller than kernel {kernel}")
        self.kernel = kernel
        self.stride = stride
        lead = x.shape[:-2]
        x4 = x.reshape((-1, 1) + x.shape[-2:])
        windows = sliding_window_view(x4, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
        self.out_hw = windows.shape[2:4]
        out = windows.mean(axis=(4, 5))
        return out.reshape(lead + self.out_hw)

    def backward(self, grad):
        x = self.tensors[0]
        k = self.kernel
        g4 = grad.reshape((-1, 1) + self.out_hw)
        grad_windows = np.broadcast_to((g4 / (k * k))[..., None, None], g4.shape + (k, k))
        x4_shape = (g4.shape[0], 1) + x.shape[-2:]
        return (_scatter_windows(grad_windows, x4_shape, self.stride).reshape(x.shape),)


def conv2d(
    x: Union[Tensor, np.ndarray],
    kernel: Union[Tensor, np.ndarray],
    bias: Optional[Union[Tensor, np.ndarray]] = None,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    out = Conv2d.apply(x, kernel, stride=stride, padding=padding)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.reshape((1, bias.size, 1, 1))
    return out


def avg_pool2d(x: Union[Tensor, np.ndarray], kernel: int = 2, stride: int = 2) -> Tensor:
    return AvgPool2d.apply(x, kernel=kernel, stride=stride)


def upsample_nearest(x: Union[Tensor, np.ndarray], factor: int = 2, size: Optional[Tuple[int, int]] = None) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes, optionally cropped to ``size``"""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    out_h, out_w = size if size is not None else (h * factor, w * factor)
    rows = np.minimum(np.arange(out_h) // factor, h - 1)
    cols = np.minimum(np.arange(out_w) // factor, w - 1)
    return getitem(x, (Ellipsis, rows[:, None], cols[None, :]))
