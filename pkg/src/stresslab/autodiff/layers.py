"""Parameterized building blocks.

Modules own named :class:`Parameter` objects and (for batch norm) running
statistics. Weights use He-style fan-in scaled normal initialization, biases
start at zero, batch-norm scale at one and shift at zero.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from stresslab.autodiff import ops
from stresslab.autodiff.tensor import Parameter, Tensor


class Module:
    """Base class: tracks child modules and parameters in attribute order."""

    def __init__(self):
        self.training = True

    def children(self) -> Iterator[tuple[str, Module]]:
        for k, v in vars(self).items():
            if isinstance(v, Module):
                yield k, v
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield f"{k}.{i}", m

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = [(p.name, p) for p in vars(self).values() if isinstance(p, Parameter)]
        for _, child in self.children():
            out.extend(child.named_parameters())
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for _, child in self.children():
            out.extend(child.named_buffers())
        return out

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2D(Module):
    def __init__(self, name, c_in, c_out, kernel, rng, stride=1, bias=True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.w = Parameter(f"{name}.w", _he_normal(rng, (kernel, kernel, c_in, c_out), kernel * kernel * c_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(c_out, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding="same")


class ConvTranspose2D(Module):
    def __init__(self, name, c_in, c_out, kernel, rng, stride=2, bias=True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        # each output pixel sees about kernel^2 / stride^2 input taps per channel
        fan_in = max(1, kernel * kernel * c_in // (stride * stride))
        self.w = Parameter(f"{name}.w", _he_normal(rng, (kernel, kernel, c_in, c_out), fan_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(c_out, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.w, self.b, stride=self.stride)


class Dense(Module):
    def __init__(self, name, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        self.w = Parameter(f"{name}.w", _he_normal(rng, (n_in, n_out), n_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(n_out, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.w, self.b)


class BatchNorm(Module):
    def __init__(self, name, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, np.float64)
        self.running_var = np.ones(channels, np.float64)

    def named_buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean), (f"{self.name}.running_var", self.running_var)]

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class SEBlock(Module):
    """Squeeze (global average pool) and excitation (FC-ReLU-FC-sigmoid) channel rescale."""

    def __init__(self, name, channels, reduction, rng, dtype=np.float32):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Dense(f"{name}.fc1", channels, hidden, rng, dtype)
        self.fc2 = Dense(f"{name}.fc2", hidden, channels, rng, dtype)

    def excitation(self, u: Tensor) -> Tensor:
        s = ops.global_avg_pool(u)
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(s))))

    def forward(self, u: Tensor) -> Tensor:
        return ops.scale_channels(u, self.excitation(u))


class SEResBlock(Module):
    """conv-BN-ReLU-conv-BN-SE branch added to the identity shortcut, then ReLU."""

    def __init__(self, name, channels, reduction, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2D(f"{name}.conv1", channels, channels, 3, rng, bias=False, dtype=dtype)
        self.bn1 = BatchNorm(f"{name}.bn1", channels, dtype=dtype)
        self.conv2 = Conv2D(f"{name}.conv2", channels, channels, 3, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm(f"{name}.bn2", channels, dtype=dtype)
        self.se = SEBlock(f"{name}.se", channels, reduction, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.se(self.bn2(self.conv2(y)))
        return ops.relu(ops.add(y, x))
