"""Desk-scale teacher/student distillation with logit fingerprints.

The classification task is a set of Gaussian clusters. The teacher (wider,
deeper) is trained with cross-entropy; the fingerprint is added to its
logits row by row, each row carrying an independently bit-flipped copy of
the leaker's key; the student (smaller) is fit to those logits with MSE, or
with temperature-scaled KL when a positive temperature is configured.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from puffprint.encoding import EncodingScheme, encode
from puffprint.nn import Network, TrainConfig, mlp, train
from puffprint.nn.layers import Dense, Layer, Quantize
from puffprint.nn.losses import loss_kd
from puffprint.puf import NoiseModel, PufKey, apply_noise
from puffprint.quantize import QuantSpec, quantize
from puffprint.rng import derive_seed, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    d: int = 10
    input_dim: int = 20
    samples_per_class: int = 500
    class_separation: float = 3.0
    rng_seed: int = 0
    test_per_class: Optional[int] = None

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ValueError("a task needs at least two classes")
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise ValueError("input_dim and samples_per_class must be >= 1")
        if not self.class_separation >= 0:
            raise ValueError("class_separation must be non-negative")


@dataclass
class Task:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    means: np.ndarray

    @property
    def d(self) -> int:
        return int(self.means.shape[0])


def make_task(spec: TaskSpec) -> Task:
    """Isotropic unit-variance clusters whose means sit on a sphere of radius ``class_separation``."""
    rng = make_rng(spec.rng_seed, "task")
    directions = rng.normal(size=(spec.d, spec.input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.class_separation * directions

    def draw(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        y = np.repeat(np.arange(spec.d), per_class)
        x = means[y] + rng.normal(size=(y.size, spec.input_dim))
        order = rng.permutation(y.size)
        return x[order], y[order]

    x_train, y_train = draw(spec.samples_per_class)
    x_test, y_test = draw(spec.test_per_class or spec.samples_per_class)
    return Task(x_train, y_train, x_test, y_test, means)


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy in percent."""
    return float(np.mean(np.argmax(net.forward(x), axis=1) == y) * 100.0)


def quantize_network(net: Network, m_bits: int, calibration: np.ndarray) -> Network:
    """Post-training fake quantization of inputs, weights and activations.

    Each weight and bias tensor is quantized over its own range; activation
    ranges are calibrated on ``calibration`` inputs. The returned network
    inserts a Quantize layer in front of the first layer and after every
    hidden activation.
    """
    layers: list[Layer] = []
    x = np.asarray(calibration, dtype=np.float64)
    layers.append(Quantize(QuantSpec.fit(x, m_bits)))
    x = layers[0].forward(x)
    last_dense = max(i for i, l in enumerate(net.layers) if isinstance(l, Dense))
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            W = quantize(layer.W, QuantSpec.fit(layer.W, m_bits))
            b = quantize(layer.b, QuantSpec.fit(layer.b, m_bits))
            new: Layer = Dense(layer.n_in, layer.n_out, weights=W, bias=b)
        else:
            new = layer
        layers.append(new)
        x = new.forward(x)
        if not isinstance(layer, Dense) and i < last_dense:
            q = Quantize(QuantSpec.fit(x, m_bits))
            layers.append(q)
            x = q.forward(x)
    return Network(layers, input_dim=net.input_dim)


DEFAULT_TEACHER_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=64, max_epochs=40, early_stop_patience=5)
# Students run the full cosine schedule: the mean residual on the query set must
# settle well below the smallest fingerprint amplitude.
DEFAULT_STUDENT_TRAIN = TrainConfig(learning_rate=2e-3, batch_size=64, max_epochs=100, early_stop_patience=0,
                                    lr_schedule="cosine")


def train_teacher(task: Task, hidden: Sequence[int] = (128, 128), config: TrainConfig = DEFAULT_TEACHER_TRAIN,
                  quant_bits: Optional[int] = None) -> tuple[Network, float]:
    """Cross-entropy teacher; returns the (optionally quantized) network and its test accuracy."""
    net = mlp([task.x_train.shape[1], *hidden, task.d], rng_seed=derive_seed(config.rng_seed, "teacher"))
    if config.max_epochs > 0:
        train(net, task.x_train, task.y_train, "ce", config)
    if quant_bits is not None:
        net = quantize_network(net, quant_bits, task.x_train)
    return net, accuracy(net, task.x_test, task.y_test)


@dataclass
class DistillRun:
    """One fingerprinting experiment.

    ``scheme=None`` means no perturbation (the control condition).
    ``temperature == 0`` selects the MSE logit-matching loss; a positive
    value selects KL distillation at that temperature.
    """

    teacher: Network
    scheme: Optional[EncodingScheme]
    leaker_key: PufKey
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(0.05, 0))
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0 (0 selects MSE)")
        if self.scheme is not None:
            if self.scheme.logit_dim(self.leaker_key.n) != self.teacher.output_dim:
                raise ValueError(
                    f"{self.leaker_key.n}-bit key under {self.scheme.variant.value} does not fit "
                    f"{self.teacher.output_dim} logits"
                )


def fingerprinted_logits(teacher: Network, inputs, run: DistillRun) -> np.ndarray:
    """Teacher logits plus a per-row perturbation from a freshly bit-flipped key."""
    z = teacher.forward(inputs)
    if run.scheme is None:
        return z
    noisy = apply_noise(run.leaker_key, run.noise, z.shape[0])
    return z + encode(noisy, run.scheme, d=z.shape[1])


@dataclass
class DistillResult:
    student: Network
    control: Network
    acc_s: float
    acc_p: float
    history_loss: list[float] = field(default_factory=list)


def _fit_student(task: Task, targets: np.ndarray, hidden: Sequence[int], config: TrainConfig,
                 temperature: float) -> tuple[Network, list[float]]:
    net = mlp([task.x_train.shape[1], *hidden, task.d], rng_seed=derive_seed(config.rng_seed, "student"))
    if temperature > 0:
        loss = lambda pred, target: loss_kd(target, pred, temperature)  # noqa: E731
    else:
        loss = "mse"
    _, hist = train(net, task.x_train, targets, loss, config)
    return net, hist.train_loss


def distill_student(teacher: Network, run: DistillRun, task: Task, hidden: Sequence[int] = (64,),
                    config: TrainConfig = DEFAULT_STUDENT_TRAIN) -> DistillResult:
    """Distil a fingerprinted student and a clean control under identical seeds."""
    clean = teacher.forward(task.x_train)
    fp = fingerprinted_logits(teacher, task.x_train, run)
    student, hist = _fit_student(task, fp, hidden, config, run.temperature)
    control, _ = _fit_student(task, clean, hidden, config, run.temperature)
    return DistillResult(
        student=student,
        control=control,
        acc_s=accuracy(control, task.x_test, task.y_test),
        acc_p=accuracy(student, task.x_test, task.y_test),
        history_loss=hist,
    )


def probe_deltas(teacher: Network, student: Network, probe_inputs) -> np.ndarray:
    """Row-wise ``z_s - z_t`` on shared probe inputs."""
    zs = student.forward(probe_inputs)
    zt = teacher.forward(probe_inputs)
    if zs.shape != zt.shape:
        raise ValueError(f"student logits {zs.shape} vs teacher logits {zt.shape}")
    return zs - zt
