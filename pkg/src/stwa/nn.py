"""Parameter containers: a tiny module base class, Linear and MLP."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects parameters from attributes in definition order.

    Tensors, sub-modules and lists of sub-modules assigned as attributes are
    discovered automatically; names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = T.uniform_init(rng, (d_in, d_out), d_in)
        self.bias = T.uniform_init(rng, (d_out,), d_in) if bias else None

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class MLP(Module):
    """Fully connected stack with ReLU between layers and a linear output."""

    def __init__(self, rng: np.random.Generator, sizes: Sequence[int]):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least an input and an output size")
        self.layers = [Linear(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x
