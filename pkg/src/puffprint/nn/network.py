from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from puffprint.nn.layers import Dense, Layer, ReLU, Sigmoid, SoftmaxT
from puffprint.rng import make_rng


class NonFiniteError(FloatingPointError):
    """A forward pass or update produced NaN or Inf."""


class Network:
    """An ordered stack of layers with dimension checking."""

    def __init__(self, layers: Sequence[Layer], input_dim: int | None = None):
        self.layers = list(layers)
        dense = [l for l in self.layers if isinstance(l, Dense)]
        if not dense:
            raise ValueError("a network needs at least one Dense layer")
        self.input_dim = dense[0].n_in if input_dim is None else input_dim
        dim = self.input_dim
        for layer in self.layers:
            if isinstance(layer, Dense) and layer.n_in != dim:
                raise ValueError(f"{layer!r} expects {layer.n_in} inputs but receives {dim}")
            dim = layer.out_dim(dim)
        self.output_dim = dim

    def __repr__(self):
        return "Network(" + ", ".join(repr(l) for l in self.layers) + ")"

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"input shape {x.shape} does not match input dimension {self.input_dim}")
        return x

    def forward(self, x, check_finite: bool = True) -> np.ndarray:
        x = self._check_input(x)
        for layer in self.layers:
            x = layer.forward(x)
        if check_finite and not np.isfinite(x).all():
            raise NonFiniteError("network output contains non-finite values")
        return x

    __call__ = forward

    def logits(self, x) -> np.ndarray:
        """Raw output of the last Dense layer, i.e. before any output activation."""
        x = self._check_input(x)
        last = max(i for i, l in enumerate(self.layers) if isinstance(l, Dense))
        for layer in self.layers[: last + 1]:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> Iterator[tuple[Layer, str, np.ndarray]]:
        for layer in self.layers:
            for name, p in layer.params().items():
                yield layer, name, p

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads()[name] for layer, name, _ in self.parameters()]

    def weights(self) -> list[np.ndarray]:
        return [p for _, _, p in self.parameters()]

    def copy_weights(self) -> list[np.ndarray]:
        return [p.copy() for p in self.weights()]

    def set_weights(self, values: Sequence[np.ndarray]) -> None:
        params = self.weights()
        if len(params) != len(values):
            raise ValueError("parameter count mismatch")
        for p, v in zip(params, values):
            p[...] = v

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.weights())


_ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid, "none": None}


def mlp(sizes: Sequence[int], rng_seed: int = 0, hidden_activation: str = "relu",
        output_activation: str = "none", temperature: float = 1.0) -> Network:
    """Dense stack ``sizes[0] -> ... -> sizes[-1]``.

    ``output_activation`` is one of ``none``, ``sigmoid``, ``relu`` or ``softmax``.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = make_rng(rng_seed, "init")
    hidden_cls = _ACTIVATIONS[hidden_activation]
    layers: list[Layer] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, rng))
        if i < len(sizes) - 2 and hidden_cls is not None:
            layers.append(hidden_cls())
    if output_activation == "softmax":
        layers.append(SoftmaxT(temperature))
    elif _ACTIVATIONS[output_activation] is not None:
        layers.append(_ACTIVATIONS[output_activation]())
    return Network(layers)
