"""Minimal layer containers on top of the autograd ops."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autograd import ops
from .autograd.ops import ConvSpec, PadSpec
from .autograd.tensor import Tensor, get_default_dtype


def Parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = ""):
        for name, v in vars(self).items():
            if isinstance(v, Tensor) and v.requires_grad:
                yield prefix + name, v
        for name, m in self.children():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, v in vars(self).items():
            if isinstance(v, np.ndarray):
                yield prefix + name, v
        for name, m in self.children():
            yield from m.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, m in self.children():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.data.copy() for k, p in self.named_parameters()}
        state.update({k: b.copy() for k, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in bufs.items():
            b[...] = state[k]

    def num_params(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))


def kaiming_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        self.spec = spec
        self.weight = Parameter(kaiming_uniform(rng, spec.weight_shape))
        if spec.bias:
            self.bias = Parameter(np.zeros(spec.out_channels))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        s = self.spec
        return ops.conv2d(x, self.weight, stride=s.stride, pad=s.pad, groups=s.groups, bias=self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        dt = get_default_dtype()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class ConvBNAct(Module):
    """conv -> BN -> SiLU, bias-free."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        self.conv = Conv2d(spec, rng)
        self.bn = BatchNorm2d(spec.out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.silu(self.bn(self.conv(x)))


def conv_bn_act(c1: int, c2: int, k: int, s: int, rng, pad=None) -> ConvBNAct:
    if pad is None:
        pad = k // 2
    return ConvBNAct(ConvSpec(c1, c2, k, k, stride=s, pad=PadSpec.of(pad)), rng)


class SGD:
    """SGD with classical momentum, no weight decay."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
