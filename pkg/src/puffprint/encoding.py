"""Key-to-logit perturbation mappings and their exact inverse.

Two schemes are supported:

* one bit per logit: ``delta_i = eps * (1 - 2 k_i)``, so bit 0 -> +eps and
  bit 1 -> -eps;
* compressed: the key is cut into consecutive ``m``-bit segments, one per
  logit. Each segment is read as a two's-complement integer ``U`` (first bit
  is the sign bit) and mapped to ``eps * (U + 0.5)``, giving ``2^m`` levels
  spaced ``eps`` apart and symmetric about zero.

All functions accept a single key (shape ``(n,)``) or a batch of keys
(shape ``(B, n)``) and return matching shapes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from puffprint.puf import PufKey
from puffprint.quantize import round_half_away


class Variant(str, enum.Enum):
    ONE_BIT = "onebit"
    COMPRESSED = "compressed"


@dataclass(frozen=True)
class EncodingScheme:
    variant: Variant = Variant.ONE_BIT
    epsilon: float = 0.05
    bits_per_logit: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.bits_per_logit < 1:
            raise ValueError("bits_per_logit must be >= 1")
        if self.variant is Variant.ONE_BIT and self.bits_per_logit != 1:
            raise ValueError("the one-bit scheme carries exactly one bit per logit")

    @classmethod
    def one_bit(cls, epsilon: float) -> "EncodingScheme":
        return cls(Variant.ONE_BIT, epsilon, 1)

    @classmethod
    def compressed(cls, bits_per_logit: int, epsilon: float) -> "EncodingScheme":
        return cls(Variant.COMPRESSED, epsilon, bits_per_logit)

    @property
    def m(self) -> int:
        return self.bits_per_logit

    def key_bits(self, d: int) -> int:
        """Key length carried by ``d`` logits."""
        return d * self.bits_per_logit

    def logit_dim(self, n: int) -> int:
        """Number of logits needed for an ``n``-bit key."""
        if n % self.bits_per_logit:
            raise ValueError(f"key length {n} is not a multiple of {self.bits_per_logit} bits per logit")
        return n // self.bits_per_logit

    def capacity(self, d: int) -> int:
        """Number of distinct identities representable on ``d`` logits."""
        return 2 ** (self.bits_per_logit * d)

    def levels(self) -> np.ndarray:
        """Every perturbation value a single logit can take, ascending."""
        if self.variant is Variant.ONE_BIT:
            return np.array([-self.epsilon, self.epsilon])
        half = 2 ** (self.m - 1)
        return self.epsilon * (np.arange(-half, half) + 0.5)

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "epsilon": self.epsilon, "bits_per_logit": self.bits_per_logit}


def _key_matrix(key) -> tuple[np.ndarray, bool]:
    if isinstance(key, PufKey):
        return key.bits[None, :], True
    arr = np.asarray(key)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2:
        raise ValueError(f"keys must be 1-D or 2-D, got shape {arr.shape}")
    return arr.astype(np.int64), single


def encode(key, scheme: EncodingScheme, d: int | None = None) -> np.ndarray:
    """Perturbation vector(s) for ``key`` under ``scheme``.

    ``d`` is the expected output dimension; when given, a key of the wrong
    length is rejected.
    """
    bits, single = _key_matrix(key)
    n = bits.shape[1]
    out_dim = scheme.logit_dim(n)
    if d is not None and out_dim != d:
        raise ValueError(f"{n}-bit key gives {out_dim} logits under {scheme.variant.value}, expected {d}")
    if scheme.variant is Variant.ONE_BIT:
        delta = scheme.epsilon * (1.0 - 2.0 * bits)
    else:
        m = scheme.m
        seg = bits.reshape(bits.shape[0], out_dim, m)
        weights = 1 << np.arange(m - 1, -1, -1)
        unsigned = seg @ weights
        signed = np.where(seg[..., 0] == 1, unsigned - (1 << m), unsigned)
        delta = scheme.epsilon * (signed + 0.5)
    delta = delta.astype(np.float64)
    return delta[0] if single else delta


def embed(teacher_logits, delta) -> np.ndarray:
    """Fingerprinted logits ``z_t + delta`` (broadcasts a single delta over a batch)."""
    z = np.asarray(teacher_logits, dtype=np.float64)
    dl = np.asarray(delta, dtype=np.float64)
    if z.shape[-1] != dl.shape[-1]:
        raise ValueError(f"dimension mismatch: logits {z.shape} vs perturbation {dl.shape}")
    if dl.ndim == 2 and z.ndim == 2 and dl.shape[0] != z.shape[0]:
        raise ValueError(f"batch mismatch: logits {z.shape} vs perturbation {dl.shape}")
    return z + dl


def analytic_decode(delta_estimate, scheme: EncodingScheme) -> np.ndarray:
    """Nearest-level inverse of :func:`encode`.

    One-bit: bit 0 iff the estimate is strictly positive (zero decodes to 1).
    Compressed: ``U = clamp(round(delta/eps - 0.5))`` with ties rounded away
    from zero, then re-encoded as ``m``-bit two's complement.
    Returns uint8 bits with shape ``(n,)`` or ``(B, n)``.
    """
    est = np.asarray(delta_estimate, dtype=np.float64)
    single = est.ndim == 1
    est = np.atleast_2d(est)
    if scheme.variant is Variant.ONE_BIT:
        bits = np.where(est > 0, 0, 1).astype(np.uint8)
    else:
        m = scheme.m
        half = 1 << (m - 1)
        U = np.clip(round_half_away(est / scheme.epsilon - 0.5), -half, half - 1).astype(np.int64)
        unsigned = np.mod(U, 1 << m)
        shifts = np.arange(m - 1, -1, -1)
        bits = ((unsigned[..., None] >> shifts) & 1).astype(np.uint8)
        bits = bits.reshape(est.shape[0], est.shape[1] * m)
    return bits[0] if single else bits
