"""Finite-difference checks of the analytic gradients.

Each case builds a small random network ending in a particular layer type,
pairs it with one loss, and compares every parameter gradient and the input
gradient against central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from puffprint.nn.layers import Dense, Layer, ReLU, Sigmoid, SoftmaxT
from puffprint.nn.losses import loss_bce, loss_ce, loss_kd, loss_mse
from puffprint.nn.network import Network
from puffprint.rng import make_rng

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = f()
        x[i] = orig - step
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad


@dataclass
class CheckResult:
    name: str
    cases: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _case(rng: np.random.Generator, tail: str, loss_name: str):
    n_in = int(rng.integers(2, 6))
    hidden = int(rng.integers(2, 7))
    n_out = int(rng.integers(2, 5))
    batch = int(rng.integers(1, 5))
    # hidden activation alternates so every layer type sits inside a chain
    hidden_act: Layer = ReLU() if rng.random() < 0.5 else Sigmoid()
    layers: list[Layer] = [Dense(n_in, hidden, rng), hidden_act, Dense(hidden, n_out, rng)]
    for layer in layers:
        if isinstance(layer, Dense):
            layer.b[:] = rng.normal(scale=0.5, size=layer.b.shape)
    if tail == "sigmoid":
        layers.append(Sigmoid())
    elif tail == "relu":
        layers.append(ReLU())
    elif tail == "softmax":
        layers.append(SoftmaxT(float(rng.uniform(0.5, 4.0))))
    net = Network(layers)
    x = rng.normal(size=(batch, n_in))
    if loss_name == "bce":
        target = rng.integers(0, 2, size=(batch, n_out)).astype(float)
        loss = loss_bce
    elif loss_name == "mse":
        target = rng.normal(size=(batch, n_out))
        loss = loss_mse
    elif loss_name == "ce":
        target = rng.integers(0, n_out, size=batch)
        loss = loss_ce
    else:
        T = float(rng.uniform(1.0, 5.0))
        target = rng.normal(scale=2.0, size=(batch, n_out))
        loss = lambda pred, tgt: loss_kd(tgt, pred, T)  # noqa: E731
    return net, x, target, loss


def check_network(net: Network, x: np.ndarray, target, loss) -> float:
    """Worst relative error over all parameters and the input."""
    _, g = loss(net.forward(x), target)
    g_in = net.backward(g)
    analytic = [gr.copy() for gr in net.gradients()]

    def f() -> float:
        return loss(net.forward(x, check_finite=False), target)[0]

    worst = 0.0
    for p, a in zip(net.weights(), analytic):
        worst = max(worst, relative_error(a, numeric_gradient(f, p)))
    worst = max(worst, relative_error(g_in, numeric_gradient(f, x)))
    return worst


SUITE = [
    ("dense+sigmoid / bce", "sigmoid", "bce"),
    ("dense+relu / mse", "relu", "mse"),
    ("dense+softmax-T / mse", "softmax", "mse"),
    ("dense / ce", "none", "ce"),
    ("dense / kd", "none", "kd"),
]


def run_selftest(configs: int = 20, seed: int = 0) -> list[CheckResult]:
    results = []
    for k, (name, tail, loss_name) in enumerate(SUITE):
        rng = make_rng(seed, "gradcheck", k)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(configs):
            worst = max(worst, check_network(*_case(rng, tail, loss_name)))
        results.append(CheckResult(name, configs, worst, time.perf_counter() - start))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<26} {'cases':>5} {'max rel err':>12}  result"]
    for r in results:
        lines.append(f"{r.name:<26} {r.cases:>5} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
