"""Module container and the standard layers built on :mod:`smasnn.tensor`.

Every layer consumes and produces sequence activations shaped
``(B, T, ...)``; frame-wise layers fold time into the batch axis.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as tn
from .errors import ShapeError
from .tensor import Value


class Module:
    """Tree of named parameters, buffers and child modules."""

    def __init__(self):
        self._params: dict[str, Value] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, data: np.ndarray) -> Value:
        v = Value(data, requires_grad=True, name=name)
        self._params[name] = v
        return v

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        arr = np.array(data, dtype=tn.DTYPE)
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, module: Module) -> Module:
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Value]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix.rstrip("."), self
        for cname, child in self._children.items():
            yield from child.named_modules(f"{prefix}{cname}.")

    def parameters(self) -> list[Value]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> Module:
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters followed by buffers, keyed by dotted path."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def fold_time(x: Value) -> tuple[Value, tuple[int, int]]:
    """(B, T, ...) -> (B*T, ...)."""
    b, t = x.shape[:2]
    return x.reshape((b * t,) + x.shape[2:]), (b, t)


def unfold_time(x: Value, bt: tuple[int, int]) -> Value:
    return x.reshape(bt + x.shape[1:])


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1, bias: bool = False):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.padding = tn.same_padding(kernel)
        self.weight = self.add_param("weight", kaiming_uniform(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel))
        self.bias = self.add_param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x: Value) -> Value:
        flat, bt = fold_time(x)
        out = tn.conv2d(flat, self.weight, self.bias, stride=self.stride, padding=self.padding)
        return unfold_time(out, bt)


class BatchNorm(Module):
    """Batch norm over channel axis 2 of (B, T, C, ...); statistics pool batch and time."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def forward(self, x: Value) -> Value:
        return tn.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps, channel_axis=2,
        )


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = self.add_param("weight", kaiming_uniform(rng, (n_out, n_in), n_in))
        self.bias = self.add_param("bias", np.zeros(n_out)) if bias else None

    def forward(self, x: Value) -> Value:
        return tn.affine(x, self.weight, self.bias)


class MaxPool(Module):
    def __init__(self, window: int = 2, stride: int = 2, padding: int = 0):
        super().__init__()
        self.window, self.stride, self.padding = window, stride, padding

    def forward(self, x: Value) -> Value:
        return tn.max_pool2d(x, self.window, self.stride, self.padding)


class AvgPoolGlobal(Module):
    def forward(self, x: Value) -> Value:
        return tn.avg_pool_global(x)


class Flatten(Module):
    """(B, T, ...) -> (B, T, features)."""

    def forward(self, x: Value) -> Value:
        if x.ndim < 3:
            raise ShapeError(f"flatten expects (B, T, ...), got {x.shape}")
        return x.reshape(x.shape[:2] + (-1,))


class Dropout(Module):
    """Inverted dropout with one mask shared across all timesteps of a sample."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng: np.random.Generator | None = None

    def forward(self, x: Value) -> Value:
        if not self.training or self.p == 0.0:
            return x
        if self.rng is None:
            raise RuntimeError("dropout in training mode needs an rng; call Model.set_rng")
        shape = (x.shape[0], 1) + x.shape[2:]
        keep = (self.rng.random(shape) >= self.p) / (1.0 - self.p)
        return x * Value(keep)


class Sequential(Module):
    def __init__(self, layers: list[tuple[str, Module]] | None = None):
        super().__init__()
        for name, layer in layers or []:
            self.add_child(name, layer)

    def append(self, name: str, layer: Module) -> Module:
        return self.add_child(name, layer)

    def __iter__(self):
        return iter(self._children.items())

    def __len__(self):
        return len(self._children)

    def __getitem__(self, name: str) -> Module:
        return self._children[name]

    def forward(self, x: Value) -> Value:
        for _, layer in self._children.items():
            x = layer(x)
        return x
