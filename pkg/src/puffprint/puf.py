"""Simulated PUF keys, the enrolled-key registry, and intra-device bit flips.

A device identity is an ``n``-bit key. The realistic (reduced) key space is
modelled by a registry holding ``R`` distinct keys sampled from ``{0,1}^n``
rather than by simulating bias or inter-bit correlation.

Registry files are plain text::

    n=<bits> count=<R>
    <device-id> <hex-key>
    ...

The hex string is the key read MSB-first (bit 0 is the most significant),
zero-padded to ``ceil(n/4)`` digits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from puffprint.rng import make_rng

KeyLike = Union["PufKey", Sequence[int], np.ndarray]

# dense sampling by permutation below this key-space size, rejection above
_PERMUTE_LIMIT = 1 << 20


class RegistryError(ValueError):
    """Invalid registry contents or parameters."""


def _bits_array(bits: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError(f"key bits must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("key bits must be 0 or 1")
    return arr.astype(np.uint8)


class PufKey:
    """An immutable ``n``-bit device key."""

    __slots__ = ("_bits",)

    def __init__(self, bits: Iterable[int] | np.ndarray, n: int | None = None):
        arr = _bits_array(bits)
        if arr.size == 0:
            raise ValueError("a key needs at least one bit")
        if n is not None and arr.size != n:
            raise ValueError(f"expected {n} bits, got {arr.size}")
        arr.setflags(write=False)
        self._bits = arr

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def n(self) -> int:
        return int(self._bits.size)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[int]:
        return iter(int(b) for b in self._bits)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, PufKey):
            return self.n == other.n and bool(np.array_equal(self._bits, other._bits))
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.n, self._bits.tobytes()))

    def __repr__(self) -> str:
        return f"PufKey('{self.bitstring()}')"

    def bitstring(self) -> str:
        return "".join(str(int(b)) for b in self._bits)

    def to_int(self) -> int:
        return int(self.bitstring(), 2)

    def hex(self) -> str:
        width = (self.n + 3) // 4
        return format(self.to_int(), f"0{width}x")

    @classmethod
    def from_int(cls, value: int, n: int) -> "PufKey":
        if value < 0 or value >= (1 << n):
            raise ValueError(f"{value} does not fit in {n} bits")
        return cls([int(c) for c in format(value, f"0{n}b")])

    @classmethod
    def from_hex(cls, text: str, n: int) -> "PufKey":
        return cls.from_int(int(text, 16), n)

    @classmethod
    def from_bitstring(cls, text: str) -> "PufKey":
        return cls([int(c) for c in text.strip()])


def as_bits(key: KeyLike) -> np.ndarray:
    """Bits of ``key`` as a uint8 array (no copy for PufKey)."""
    if isinstance(key, PufKey):
        return key.bits
    return _bits_array(key)


@dataclass(frozen=True)
class NoiseModel:
    """Independent Bernoulli bit flips at rate ``p_flip``."""

    p_flip: float
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError(f"p_flip must lie in [0, 1], got {self.p_flip}")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


class KeyRegistry:
    """Enrolled device keys searched by the Hamming stage.

    ``keys`` is an ``(R, n)`` uint8 matrix; ``ids`` holds one device id per row.
    """

    def __init__(self, keys: np.ndarray | Sequence[KeyLike], ids: Sequence[str] | None = None):
        if isinstance(keys, np.ndarray) and keys.ndim == 2:
            mat = keys.astype(np.uint8)
        else:
            rows = [as_bits(k) for k in keys]
            if not rows:
                raise RegistryError("registry is empty")
            lengths = {r.size for r in rows}
            if len(lengths) != 1:
                raise RegistryError(f"keys have differing lengths {sorted(lengths)}")
            mat = np.stack(rows).astype(np.uint8)
        if mat.shape[0] == 0:
            raise RegistryError("registry is empty")
        if mat.shape[1] == 0:
            raise RegistryError("keys must have at least one bit")
        if not np.isin(mat, (0, 1)).all():
            raise RegistryError("key bits must be 0 or 1")
        if np.unique(mat, axis=0).shape[0] != mat.shape[0]:
            raise RegistryError("registry contains duplicate keys")
        if ids is None:
            width = max(4, len(str(mat.shape[0] - 1)))
            ids = [f"dev{i:0{width}d}" for i in range(mat.shape[0])]
        ids = [str(i) for i in ids]
        if len(ids) != mat.shape[0]:
            raise RegistryError(f"{len(ids)} ids for {mat.shape[0]} keys")
        if len(set(ids)) != len(ids):
            raise RegistryError("duplicate device ids")
        for i in ids:
            if not i or any(c.isspace() for c in i):
                raise RegistryError(f"device id {i!r} must be non-empty without whitespace")
        mat.setflags(write=False)
        self._keys = mat
        self._ids = tuple(ids)
        self._index = {d: i for i, d in enumerate(self._ids)}

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def n(self) -> int:
        return int(self._keys.shape[1])

    def __len__(self) -> int:
        return int(self._keys.shape[0])

    def __getitem__(self, index: int) -> PufKey:
        return PufKey(self._keys[index])

    def __iter__(self) -> Iterator[PufKey]:
        return (PufKey(row) for row in self._keys)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeyRegistry):
            return NotImplemented
        return self._ids == other._ids and np.array_equal(self._keys, other._keys)

    def index_of(self, device_id: str) -> int:
        try:
            return self._index[device_id]
        except KeyError:
            raise KeyError(f"unknown device id {device_id!r}") from None

    def key_of(self, device_id: str) -> PufKey:
        return self[self.index_of(device_id)]

    def subset(self, count: int) -> "KeyRegistry":
        """The first ``count`` enrolled devices."""
        if not 1 <= count <= len(self):
            raise RegistryError(f"cannot take {count} of {len(self)} devices")
        return KeyRegistry(self._keys[:count], self._ids[:count])

    def dumps(self) -> str:
        lines = [f"n={self.n} count={len(self)}"]
        lines += [f"{dev} {PufKey(row).hex()}" for dev, row in zip(self._ids, self._keys)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "KeyRegistry":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise RegistryError("empty registry file")
        header = dict(part.split("=", 1) for part in lines[0].split() if "=" in part)
        try:
            n = int(header["n"])
            count = int(header["count"])
        except (KeyError, ValueError):
            raise RegistryError(f"bad registry header {lines[0]!r}") from None
        body = lines[1:]
        if len(body) != count:
            raise RegistryError(f"header declares {count} keys, file has {len(body)}")
        ids, keys = [], []
        for ln in body:
            parts = ln.split()
            if len(parts) != 2:
                raise RegistryError(f"bad registry line {ln!r}")
            try:
                keys.append(PufKey.from_hex(parts[1], n).bits)
            except ValueError as exc:
                raise RegistryError(f"bad key on line {ln!r}: {exc}") from None
            ids.append(parts[0])
        return cls(np.stack(keys), ids)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "KeyRegistry":
        with open(path, encoding="ascii") as fh:
            return cls.loads(fh.read())


def _ints_to_bits(values: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((values[:, None].astype(np.int64) >> shifts) & 1).astype(np.uint8)


def generate_registry(n: int, R: int, rng_seed: int = 0) -> KeyRegistry:
    """Sample ``R`` distinct, uniformly random ``n``-bit keys."""
    if n < 1:
        raise RegistryError("bit-length n must be at least 1")
    if R < 1:
        raise RegistryError("device count R must be at least 1")
    if n < 63 and R > (1 << n):
        raise RegistryError(f"cannot draw {R} distinct keys: key space has only 2^{n} = {1 << n} entries")
    rng = make_rng(rng_seed, "registry")
    if n <= 20 and (1 << n) <= _PERMUTE_LIMIT:
        values = rng.permutation(1 << n)[:R]
        return KeyRegistry(_ints_to_bits(values, n))
    seen: set[bytes] = set()
    rows: list[np.ndarray] = []
    while len(rows) < R:
        for row in rng.integers(0, 2, size=(R - len(rows), n), dtype=np.uint8):
            tag = row.tobytes()
            if tag not in seen:
                seen.add(tag)
                rows.append(row)
    return KeyRegistry(np.stack(rows))


def apply_noise(key: KeyLike, model: NoiseModel, B: int) -> np.ndarray:
    """Return a ``(B, n)`` matrix whose rows are ``key XOR mask_j``."""
    if B < 1:
        raise ValueError("batch size B must be at least 1")
    bits = as_bits(key)
    rng = make_rng(model.rng_seed, "puf-noise")
    mask = (rng.random((B, bits.size)) < model.p_flip).astype(np.uint8)
    return np.bitwise_xor(bits[None, :], mask)


def hamming_distance(a: KeyLike, b: KeyLike) -> int:
    """Number of positions at which two equal-length keys differ."""
    x, y = as_bits(a), as_bits(b)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return int(np.count_nonzero(x != y))
