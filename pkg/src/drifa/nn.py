"""Parameters, a small module system, and the two learnable layers the network needs."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor that the optimizer may update.

    ``trainable=False`` freezes it: the optimizer skips it and gradient-norm
    reports ignore it.
    """

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Module:
    """Container that discovers parameters from its attributes, in assignment order.

    Attributes may be Parameters, Modules, or lists/dicts of Modules; names are
    dotted paths such as ``branch0.rra1.mfa1.hifa.psi0.weight``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            yield from _walk(value, prefix + attr)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            if name not in own:
                continue
            param = own[name]
            value = np.asarray(value)
            if value.shape != param.shape:
                raise T.ShapeMismatch(f"{name}: checkpoint {value.shape} vs model {param.shape}")
            param.data = np.array(value, dtype=param.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            if isinstance(item, (Module, Parameter)):
                yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            if isinstance(item, (Module, Parameter)):
                yield from _walk(item, f"{name}.{key}")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, bias: bool = True, dtype=None):
        dtype = dtype or T.get_default_dtype()
        fan_in = kernel * kernel * c_in
        self.weight = Parameter(he_uniform(rng, (kernel, kernel, c_in, c_out), fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None
        self._stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self._stride, padding="same")


class Linear(Module):
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator, bias: bool = True, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.weight = Parameter(he_uniform(rng, (f_in, f_out), f_in, dtype))
        self.bias = Parameter(np.zeros(f_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.fully_connected(x, self.weight, self.bias)


def learnable_weight(shape, enabled: bool, dtype=None) -> Parameter:
    """Modulation weight initialized to 1; a disabled weight is frozen and left out of the graph."""
    return Parameter(np.ones(shape, dtype=dtype or T.get_default_dtype()), trainable=enabled)
