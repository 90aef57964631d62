"""Layer types for the dense-network engine.

Tensors are float64 numpy arrays of shape ``(batch, features)``. Each layer
caches what its backward pass needs during ``forward``; ``backward`` takes
the gradient w.r.t. the layer output and returns the gradient w.r.t. its
input, storing parameter gradients on the layer.
"""

from __future__ import annotations

import numpy as np

from puffprint.quantize import QuantSpec, quantize


class Layer:
    kind = "layer"

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def out_dim(self, in_dim: int) -> int:
        return in_dim


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 weights: np.ndarray | None = None, bias: np.ndarray | None = None):
        if n_in < 1 or n_out < 1:
            raise ValueError(f"Dense dimensions must be positive, got ({n_in}, {n_out})")
        self.n_in, self.n_out = n_in, n_out
        if weights is None:
            if rng is None:
                raise ValueError("Dense needs either weights or an rng for initialisation")
            # He-style uniform fan-in scaling
            limit = np.sqrt(6.0 / n_in)
            weights = rng.uniform(-limit, limit, size=(n_in, n_out))
        if bias is None:
            bias = np.zeros(n_out)
        self.W = np.array(weights, dtype=np.float64).reshape(n_in, n_out)
        self.b = np.array(bias, dtype=np.float64).reshape(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        self.dW = self._x.T @ grad
        self.db = grad.sum(axis=0)
        return grad @ self.W.T

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def out_dim(self, in_dim):
        return self.n_out

    def __repr__(self):
        return f"Dense({self.n_in}, {self.n_out})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask

    def __repr__(self):
        return "ReLU()"


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        self._y = out
        return out

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)

    def __repr__(self):
        return "Sigmoid()"


def softmax_t(logits, T: float = 1.0) -> np.ndarray:
    """Row-wise ``softmax(logits / T)``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_t(logits, T: float = 1.0) -> np.ndarray:
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class SoftmaxT(Layer):
    kind = "softmax"

    def __init__(self, temperature: float = 1.0):
        if not temperature > 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = float(temperature)

    def forward(self, x):
        self._y = softmax_t(x, self.temperature)
        return self._y

    def backward(self, grad):
        s = self._y
        return s * (grad - (grad * s).sum(axis=-1, keepdims=True)) / self.temperature

    def __repr__(self):
        return f"SoftmaxT({self.temperature})"


class Quantize(Layer):
    """Fake quantization of the activations passing through.

    Backward is the straight-through estimator (identity).
    """

    kind = "quantize"

    def __init__(self, spec: QuantSpec):
        self.spec = spec

    def forward(self, x):
        return quantize(x, self.spec)

    def backward(self, grad):
        return grad

    def __repr__(self):
        s = self.spec
        return f"Quantize(m={s.m_bits}, [{s.x_min:.4g}, {s.x_max:.4g}])"
