"""Minimal layer containers over the tensor engine.

A Module tracks parameter tensors and submodules in attribute-assignment
order, which fixes both initialization order and checkpoint layout.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor, parameter


class Module:
    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_mods", {})[name] = value
        elif isinstance(value, ModuleList):
            self.__dict__.setdefault("_mods", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self.__dict__.get("_params", {}).items():
            yield (prefix + name, p)
        for name, m in self.__dict__.get("_mods", {}).items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, mods=()):
        self.items = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        self.__dict__.setdefault("_mods", {})[str(len(self.items))] = mod
        self.items.append(mod)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


class Linear(Module):
    """y = x W^T + b with W stored [out, in]."""

    def __init__(self, in_features: int, out_features: int, rng: Rng,
                 dtype=np.float32, std: float = 0.02, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(rng.normal((out_features, in_features), std=std, dtype=dtype))
        self.bias = parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, T.permute(self.weight, (1, 0)))
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y


class Conv2d(Module):
    """Cross-correlation layer; weights use fan-out normal initialization."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng, stride: int = 1,
                 padding: int = 0, groups: int = 1, dtype=np.float32, bias: bool = True):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_out = kernel * kernel * out_ch // groups
        std = float(np.sqrt(2.0 / fan_out))
        self.weight = parameter(
            rng.normal((out_ch, in_ch // groups, kernel, kernel), std=std, dtype=dtype))
        self.bias = parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding,
                     groups=self.groups)
        if self.bias is not None:
            y = T.add(y, T.reshape(self.bias, (1, self.bias.size, 1, 1)))
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-6):
        self.eps = eps
        self.gamma = parameter(np.ones(dim, dtype=dtype))
        self.beta = parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta, eps=self.eps)


def tokens_to_grid(x: Tensor, h: int, w: int) -> Tensor:
    """[B, H*W, C] -> [B, C, H, W]"""
    b, n, c = x.shape
    return T.permute(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


def grid_to_tokens(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, H*W, C]"""
    b, c, h, w = x.shape
    return T.reshape(T.permute(x, (0, 2, 3, 1)), (b, h * w, c))
