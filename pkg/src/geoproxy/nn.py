"""Small fully connected networks built on the autodiff engine."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class Linear:
    """Affine layer y = x @ W + b with W of shape (fan_in, fan_out)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str = "linear"):
        std = 1.0 / np.sqrt(fan_in)
        self.weight = ad.parameter(rng.normal(0.0, std, size=(fan_in, fan_out)), name=f"{name}.weight")
        self.bias = ad.parameter(np.zeros(fan_out), name=f"{name}.bias")

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[ad.Tensor]:
        return [self.weight, self.bias]


class Mlp:
    """Stack of Linear layers with tanh between them (smooth everywhere).

    ``widths`` lists the hidden layer sizes; the output layer is linear.
    """

    def __init__(
        self,
        fan_in: int,
        widths: list[int] | tuple[int, ...],
        fan_out: int,
        rng: np.random.Generator,
        name: str = "mlp",
    ):
        dims = [fan_in, *widths, fan_out]
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, name=f"{name}.{i}") for i in range(len(dims) - 1)
        ]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x))
        return self.layers[-1](x)

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Evaluation-only forward on a plain array (no tape)."""
        for layer in self.layers[:-1]:
            x = np.tanh(x @ layer.weight.data + layer.bias.data)
        last = self.layers[-1]
        return x @ last.weight.data + last.bias.data

    def parameters(self) -> list[ad.Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
