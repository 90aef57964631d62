"""Loss functions returning ``(value, gradient)``.

Every loss averages over the batch. The gradient is taken w.r.t. the model
output (the first argument, except for ``loss_kd`` where it is the student
logits) and already includes the ``1/batch`` factor, so it can be fed
straight into ``Network.backward``.
"""

from __future__ import annotations

import numpy as np

from puffprint.nn.layers import log_softmax_t, softmax_t

PROB_CLAMP = 1e-7


def _batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def loss_bce(pred, target) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy between probabilities and 0/1 targets."""
    p = _batch(pred)
    k = _batch(target)
    if p.shape != k.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {k.shape}")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = -np.mean(k * np.log(pc) + (1.0 - k) * np.log(1.0 - pc))
    grad = (pc - k) / (pc * (1.0 - pc)) / p.size
    # clamped entries are constant in p
    grad = np.where((p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP), grad, 0.0)
    return float(value), grad


def loss_mse(a, b) -> tuple[float, np.ndarray]:
    """``mean((a - b)^2)``; gradient w.r.t. ``a``."""
    x, y = _batch(a), _batch(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def loss_ce(logits, labels) -> tuple[float, np.ndarray]:
    """Categorical cross-entropy ``-log softmax(logits)[label]``."""
    z = _batch(logits)
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape[0] != z.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {z.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise IndexError(f"class index out of range for {z.shape[1]} classes")
    labels = labels.astype(np.int64)
    logp = log_softmax_t(z)
    rows = np.arange(z.shape[0])
    value = -np.mean(logp[rows, labels])
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(value), grad / z.shape[0]


def loss_kd(teacher_logits, student_logits, T: float) -> tuple[float, np.ndarray]:
    """``T^2 * KL(softmax(teacher/T) || softmax(student/T))``; gradient w.r.t. the student."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    zs, zt = _batch(student_logits), _batch(teacher_logits)
    if zs.shape != zt.shape:
        raise ValueError(f"shape mismatch: {zs.shape} vs {zt.shape}")
    log_pt = log_softmax_t(zt, T)
    log_ps = log_softmax_t(zs, T)
    pt = np.exp(log_pt)
    kl = np.sum(pt * (log_pt - log_ps), axis=-1)
    value = T * T * np.mean(kl)
    grad = T * (softmax_t(zs, T) - pt) / zs.shape[0]
    return float(max(value, 0.0)), grad
