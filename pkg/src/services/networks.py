"""Depth and motion networks built on the engine's conv primitives"""
import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.engine import functional as F
from src.engine.conv import conv2d, upsample_nearest
from src.engine.tensor import Tensor, as_tensor, parameter
from src.services.losses import HeightPriors
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

ENCODER_CHANNELS = (16, 32, 64, 128)
DEPTH_SCALE = 10.0
DEPTH_OFFSET = 0.01
MOTION_SCALE = 0.01


class Module:
    """Container of named parameters and child modules, kept in definition order"""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        tensor = parameter(value, name=name)
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield prefix + name, tensor
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def kernels(self) -> List[Tensor]:
        """Weights subject to L2 regularization (biases excluded)"""
        return [tensor for name, tensor in self.named_parameters() if name.endswith("weight")]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state mismatch; missing {missing}, unexpected {unexpected}")
        for name, tensor in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"{name}: expected shape {tensor.shape}, got {value.shape}")
            tensor.data = value.copy()
            tensor.grad = None

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv(Module):
    """3x3 (or k x k) convolution with bias; He-normal weights"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 1, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            weight = np.zeros(shape)
        else:
            weight = rng.normal(0.0, np.sqrt(2.0 / (in_channels * kernel_size * kernel_size)), shape)
        self.weight = self.add_parameter("weight", weight)
        self.bias = self.add_parameter("bias", np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding="same")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        if zero_init:
            weight = np.zeros((in_features, out_features))
        else:
            weight = rng.normal(0.0, np.sqrt(1.0 / in_features), (in_features, out_features))
        self.weight = self.add_parameter("weight", weight)
        self.bias = self.add_parameter("bias", np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Encoder(Module):
    """Four stride-2 conv + ReLU blocks; returns every block's features"""

    def __init__(self, in_channels: int, rng: np.random.Generator, channels: Sequence[int] = ENCODER_CHANNELS):
        super().__init__()
        self.blocks: List[Conv] = []
        previous = in_channels
        for i, width in enumerate(channels):
            self.blocks.append(self.add_child(f"conv{i + 1}", Conv(previous, width, rng, stride=2)))
            previous = width

    def forward(self, x: Tensor) -> List[Tensor]:
        features = []
        for block in self.blocks:
            x = F.relu(block(x))
            features.append(x)
        return features


def _to_batch(x, channels: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"expected input of shape (N, {channels}, H, W), got {x.shape}")
    return x


class DepthNet(Module):
    """Encoder-decoder with skip connections and a positive depth head at 4 scales.

    Outputs are ordered from full resolution down to 1/8; each is (N, H_s, W_s).
    """

    def __init__(self, seed: int = 0, channels: Sequence[int] = ENCODER_CHANNELS):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.encoder = self.add_child("encoder", Encoder(3, rng, channels))
        skips = [3] + list(channels[:-1])
        self.decoders: List[Conv] = []
        self.heads: List[Conv] = []
        previous = channels[-1]
        for level in (3, 2, 1, 0):
            width = channels[level - 1] if level > 0 else channels[0]
            self.decoders.append(self.add_child(f"decoder{level}", Conv(previous + skips[level], width, rng)))
            self.heads.append(self.add_child(f"head{level}", Conv(width, 1, rng)))
            previous = width

    def forward(self, images) -> List[Tensor]:
        x = _to_batch(images, 3)
        h, w = x.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(f"image size must be divisible by 8, got {h}x{w}")
        features = self.encoder(x)
        skips = [x] + features[:-1]
        out = features[-1]
        depths: Dict[int, Tensor] = {}
        for level, decoder, head in zip((3, 2, 1, 0), self.decoders, self.heads):
            skip = skips[level]
            out = upsample_nearest(out, size=skip.shape[2:])
            out = F.relu(decoder(F.concat([out, skip], axis=1)))
            logits = head(out)
            depth = 1.0 / (DEPTH_SCALE * F.sigmoid(logits) + DEPTH_OFFSET)
            depths[level] = depth.reshape((depth.shape[0],) + depth.shape[2:])
        return [depths[level] for level in range(4)]


class MotionNet(Module):
    """Encoder, global average pooling and a zero-initialized 12-way head.

    Returns (N, 2, 6): two (t_x, t_y, t_z, r_x, r_y, r_z) motions per input.
    """

    def __init__(self, seed: int = 0, in_channels: int = 9, channels: Sequence[int] = ENCODER_CHANNELS):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.encoder = self.add_child("encoder", Encoder(in_channels, rng, channels))
        self.head = self.add_child("head", Linear(channels[-1], 12, rng, zero_init=True))

    def forward(self, stacked) -> Tensor:
        x = _to_batch(stacked, self.in_channels)
        pooled = self.encoder(x)[-1].mean(axis=(2, 3))
        return (self.head(pooled) * MOTION_SCALE).reshape(x.shape[0], 2, 6)


class ModelBundle:
    """The depth network, the ego-motion network, the object-motion network and the height priors"""

    def __init__(self, seed: int = 0, num_categories: int = 1, prior_init: float = 1.0):
        self.depth = DepthNet(seed=seed)
        self.ego = MotionNet(seed=seed + 1)
        self.object = MotionNet(seed=seed + 2)
        self.priors = HeightPriors(num_categories, prior_init)

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.depth.named_parameters("depth.")
        yield from self.ego.named_parameters("ego.")
        yield from self.object.named_parameters("object.")
        yield "priors", self.priors.values

    def parameters(self, names: Optional[Sequence[str]] = None) -> List[Tensor]:
        if names is None:
            return [tensor for _, tensor in self.named_parameters()]
        return [tensor for name, tensor in self.named_parameters() if name.split(".")[0] in names]

    def kernels(self) -> List[Tensor]:
        return self.depth.kernels() + self.ego.kernels() + self.object.kernels()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.depth.load_state_dict(_strip(state, "depth."))
        self.ego.load_state_dict(_strip(state, "ego."))
        self.object.load_state_dict(_strip(state, "object."))
        if "priors" not in state:
            raise ShapeError("state is missing the height priors")
        priors = np.asarray(state["priors"], dtype=np.float64)
        self.priors.values.data = priors.reshape(-1).copy()

    def num_parameters(self) -> int:
        return self.depth.num_parameters() + self.ego.num_parameters() + self.object.num_parameters()

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.grad = None


def _strip(state: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: value for name, value in state.items() if name.startswith(prefix)}


def l2_penalty(kernels: Sequence[Tensor]) -> Tensor:
    """0.5 * sum of squared kernel weights"""
    total = as_tensor(0.0)
    for kernel in kernels:
        total = total + (kernel * kernel).sum()
    return 0.5 * total
