"""Mini-batch training loop with early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from puffprint.nn.losses import loss_bce, loss_ce, loss_kd, loss_mse
from puffprint.nn.network import Network, NonFiniteError
from puffprint.nn.optim import SGD, Adam
from puffprint.rng import make_rng

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    early_stop_patience: int = 5
    val_fraction: float = 0.1
    lr_schedule: str = "constant"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_opt > 0):
            raise ValueError("invalid Adam hyper-parameters")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        if self.lr_schedule == "cosine":
            return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * (epoch - 1) / self.max_epochs))
        return self.learning_rate

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    """Per-epoch losses; entry 0 is the loss before any update."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss) - 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: History):
        super().__init__(message)
        self.history = history


def get_loss(name: str, temperature: float = 1.0) -> LossFn:
    """Loss callable ``(prediction, target) -> (value, grad)`` by name."""
    if name == "bce":
        return loss_bce
    if name == "mse":
        return loss_mse
    if name == "ce":
        return loss_ce
    if name == "kd":
        return lambda pred, target: loss_kd(target, pred, temperature)
    raise ValueError(f"unknown loss {name!r}")


def _evaluate(net: Network, X: np.ndarray, Y: np.ndarray, loss: LossFn, chunk: int = 8192) -> float:
    total = 0.0
    for start in range(0, X.shape[0], chunk):
        xb, yb = X[start:start + chunk], Y[start:start + chunk]
        value, _ = loss(net.forward(xb, check_finite=False), yb)
        total += value * xb.shape[0]
    return total / X.shape[0]


def train(net: Network, X, Y, loss: LossFn | str, config: TrainConfig,
          validation: Optional[tuple[np.ndarray, np.ndarray]] = None) -> tuple[Network, History]:
    """Train ``net`` in place and return it with its loss history.

    Early stopping watches the validation loss, which comes from
    ``validation`` or, failing that, a seeded ``val_fraction`` hold-out. A
    patience of 0 disables early stopping. The best weights seen are restored
    at the end. Initialisation is the caller's business; shuffling draws from
    ``config.rng_seed`` only, so identical inputs give identical weights.
    """
    if isinstance(loss, str):
        loss = get_loss(loss)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"training inputs must be a non-empty 2-D array, got shape {X.shape}")
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if X.shape[1] != net.input_dim:
        raise ValueError(f"inputs have {X.shape[1]} features, network expects {net.input_dim}")

    use_early_stop = config.early_stop_patience > 0
    if validation is not None:
        X_val = np.asarray(validation[0], dtype=np.float64)
        Y_val = np.asarray(validation[1])
    elif use_early_stop and config.val_fraction > 0 and X.shape[0] >= 10:
        order = make_rng(config.rng_seed, "split").permutation(X.shape[0])
        n_val = max(1, int(round(config.val_fraction * X.shape[0])))
        X_val, Y_val = X[order[:n_val]], Y[order[:n_val]]
        X, Y = X[order[n_val:]], Y[order[n_val:]]
    else:
        X_val = Y_val = None

    params = net.weights()
    if config.optimizer == "adam":
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps_opt)
    else:
        opt = SGD(params, config.learning_rate)
    shuffle_rng = make_rng(config.rng_seed, "shuffle")

    history = History()
    history.train_loss.append(_evaluate(net, X, Y, loss))
    if X_val is not None:
        history.val_loss.append(_evaluate(net, X_val, Y_val, loss))
    best = history.val_loss[0] if X_val is not None else history.train_loss[0]
    best_weights = net.copy_weights()
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        opt.lr = config.learning_rate_at(epoch)
        order = shuffle_rng.permutation(X.shape[0])
        total = 0.0
        for start in range(0, X.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                pred = net.forward(X[idx])
            except NonFiniteError:
                raise TrainingDiverged(f"non-finite network output in epoch {epoch}", history) from None
            value, grad = loss(pred, Y[idx])
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", history)
            net.backward(grad)
            opt.step(net.gradients())
            total += value * idx.size
        history.train_loss.append(total / X.shape[0])
        if not net.all_finite():
            raise TrainingDiverged(f"non-finite weights after epoch {epoch}", history)

        if X_val is not None:
            current = _evaluate(net, X_val, Y_val, loss)
            history.val_loss.append(current)
        else:
            current = history.train_loss[-1]
        if current < best:
            best, stale = current, 0
            history.best_epoch = epoch
            best_weights = net.copy_weights()
        else:
            stale += 1
        logger.debug("epoch %d train %.6g monitor %.6g", epoch, history.train_loss[-1], current)
        if use_early_stop and stale >= config.early_stop_patience:
            history.stopped_early = True
            break

    net.set_weights(best_weights)
    return net, history
