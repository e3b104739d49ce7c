"""Neural-network layers and functional building blocks.

Layers are small Modules holding Parameters; the math is expressed entirely
through autodiff primitives so gradients need no layer-specific code. Weight
matrices initialize from uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))
and biases start at zero; batch-norm scale starts at 1 and shift at 0.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import (
    Parameter,
    Rng,
    Tensor,
    avg_pool2d,
    concat,
    conv2d,
    matmul,
    max_pool2d,
    mul,
    pow_,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sub,
    tanh,
    tmax,
    tmean,
    transpose,
)
from .errors import ShapeError

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm",
    "LayerNorm",
    "Linear",
    "mish",
    "tanh_act",
    "channelwise_pool",
    "global_avg_pool",
    "global_max_pool",
    "max_pool2d",
    "avg_pool2d",
    "relu",
    "sigmoid",
    "softmax",
]

CONV_KERNEL_SIZES = (1, 3, 5, 7)


class Module:
    """Minimal container tracking parameters, buffers and submodules in
    insertion order, so traversal (and therefore checkpoints) is deterministic."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


class Conv2d(Module):
    """Stride-1 'same'-padded 2-d convolution with square odd kernels."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: Rng, bias: bool = True):
        super().__init__()
        if kernel_size not in CONV_KERNEL_SIZES:
            raise ShapeError(f"kernel_size must be one of {CONV_KERNEL_SIZES}, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        fan_out = out_channels * kernel_size * kernel_size
        self.weight = Parameter(glorot_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, fan_out))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over (batch, height, width) per channel.

    Training mode standardizes with biased batch statistics and folds them into
    the running estimates as rm <- momentum*rm + (1-momentum)*batch_mean;
    evaluation mode standardizes with the running estimates. Training requires
    batch*height*width >= 2 since a single value has no batch variance.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.register_buffer("running_mean", self.running_mean)
        self.register_buffer("running_var", self.running_var)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"BatchNorm expects (b,c,h,w), got {x.shape}")
        if x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm built for {self.channels} channels, got {x.shape[1]}")
        axes = (0, 2, 3)
        if self.training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            if n < 2:
                raise ValueError(f"BatchNorm training needs batch*h*w >= 2, got {n}")
            mu = tmean(x, axis=axes, keepdims=True)
            centered = sub(x, mu)
            var = tmean(mul(centered, centered), axis=axes, keepdims=True)
            inv = pow_(var + self.eps, -0.5)
            y = mul(centered, inv)
            m = self.momentum
            self.set_buffer("running_mean", m * self.running_mean + (1.0 - m) * mu.data.reshape(-1))
            self.set_buffer("running_var", m * self.running_var + (1.0 - m) * var.data.reshape(-1))
        else:
            rm = Tensor(self.running_mean.reshape(1, -1, 1, 1))
            rv = Tensor(self.running_var.reshape(1, -1, 1, 1))
            y = mul(sub(x, rm), pow_(rv + self.eps, -0.5))
        g = reshape(self.gamma, (1, self.channels, 1, 1))
        b = reshape(self.beta, (1, self.channels, 1, 1))
        return mul(y, g) + b


class LayerNorm(Module):
    """Normalization over the last dimension with learned scale and shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        if dim < 2:
            raise ShapeError(f"LayerNorm needs dim >= 2, got {dim}")
        self.dim = dim
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"LayerNorm built for dim {self.dim}, got {x.shape[-1]}")
        mu = tmean(x, axis=-1, keepdims=True)
        centered = sub(x, mu)
        var = tmean(mul(centered, centered), axis=-1, keepdims=True)
        y = mul(centered, pow_(var + self.eps, -0.5))
        return mul(y, self.gamma) + self.beta


class Linear(Module):
    """Affine map y = x W^T + b on (batch, in_features) inputs."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(glorot_uniform(rng, (out_features, in_features), in_features, out_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Linear expects (b,{self.in_features}), got {x.shape}")
        y = matmul(x, transpose(self.weight, (1, 0)))
        if self.bias is not None:
            y = y + self.bias
        return y


# ---------------------------------------------------------------------------
# activations and pooling


def mish(x: Tensor) -> Tensor:
    """x * tanh(softplus(x)): smooth, lower-bounded near -0.309, identity-like
    for large positive x."""
    return mul(x, tanh(softplus(x)))


def tanh_act(x: Tensor) -> Tensor:
    return tanh(x)


def global_avg_pool(x: Tensor) -> Tensor:
    """(b,c,h,w) -> (b,c,1,1) spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (b,c,h,w), got {x.shape}")
    return tmean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    """(b,c,h,w) -> (b,c,1,1) spatial max."""
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool expects (b,c,h,w), got {x.shape}")
    return tmax(x, axis=(2, 3), keepdims=True)


def channelwise_pool(x: Tensor) -> Tensor:
    """(b,c,h,w) -> (b,2,h,w): per-pixel max over channels, then mean."""
    if x.ndim != 4:
        raise ShapeError(f"channelwise_pool expects (b,c,h,w), got {x.shape}")
    mx = tmax(x, axis=1, keepdims=True)
    mn = tmean(x, axis=1, keepdims=True)
    return concat([mx, mn], axis=1)
