"""Multilayer perceptrons built on the tape primitives."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .autodiff import Tensor, affine, tanh


class Linear:
    """Fully connected layer; weights U(-a, a) with a = 1/sqrt(fan_in), zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in) if n_in > 0 else 0.0
        self.W = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return affine(x, self.W, self.b)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield prefix + "W", self.W
        yield prefix + "b", self.b


class MLP:
    """Stack of Linear layers with tanh between them (linear output)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = [Linear(a, b, rng) for a, b in zip(self.sizes[:-1], self.sizes[1:])]

    def __call__(self, x) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = tanh(h)
        return h

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    @property
    def output(self) -> Linear:
        return self.layers[-1]

    def zero_(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0
