"""Uniform m-bit fake quantization.

The grid follows the printed formula literally: values are clipped to
``[x_min, x_max]`` and snapped to multiples of ``1/S`` with
``S = (2^m - 1) / (x_max - x_min)``. The grid is therefore anchored at zero,
not at ``x_min``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def round_half_away(x):
    """Round to the nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantSpec:
    m_bits: int
    x_min: float
    x_max: float

    def __post_init__(self) -> None:
        if self.m_bits < 1:
            raise ValueError(f"m_bits must be >= 1, got {self.m_bits}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ValueError("quantization range must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")

    @property
    def scale(self) -> float:
        return (2.0**self.m_bits - 1.0) / (self.x_max - self.x_min)

    @classmethod
    def fit(cls, values: np.ndarray, m_bits: int) -> "QuantSpec":
        """Range taken from the observed min/max (widened if degenerate)."""
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        return cls(m_bits, lo, hi)


def quantize(x, spec: QuantSpec):
    """``round(S * clip(x)) / S`` with round-half-away-from-zero."""
    s = spec.scale
    clipped = np.clip(np.asarray(x, dtype=np.float64), spec.x_min, spec.x_max)
    out = round_half_away(s * clipped) / s
    return float(out) if out.ndim == 0 else out
